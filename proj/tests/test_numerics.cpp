#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "pidm/adam.hpp"
#include "pidm/ops.hpp"

using pidm::Rng;
using pidm::Tape;
using pidm::Tensor;
using pidm::testing::fill_uniform;
using pidm::testing::gradcheck;

using T = Tensor<double>;

TEST_CASE("conv2d: 1x1 identity weights reproduce the input") {
  Rng rng(7);
  T x = T::zeros({4, 5, 3});
  fill_uniform(x, rng, -1, 1);
  T w = T::zeros({1, 1, 3, 3});
  for (int c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
  T b = T::zeros({3});
  T y = pidm::conv2d<double>(nullptr, x, w, b);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d: zero weights give the bias per channel") {
  Rng rng(8);
  T x = T::zeros({6, 6, 2});
  fill_uniform(x, rng, -1, 1);
  T w = T::zeros({3, 3, 2, 4});
  T b = T::from({4}, {0.5, -1.0, 2.0, 0.0});
  T y = pidm::conv2d<double>(nullptr, x, w, b);
  for (int p = 0; p < 36; ++p)
    for (int o = 0; o < 4; ++o) CHECK(y.data()[p * 4 + o] == doctest::Approx(b.data()[o]));
}

TEST_CASE("conv2d: channel mismatch raises a shape error") {
  T x = T::zeros({4, 4, 3});
  T w = T::zeros({3, 3, 2, 4});
  T b = T::zeros({4});
  CHECK_THROWS_AS(pidm::conv2d<double>(nullptr, x, w, b), pidm::ShapeError);
}

TEST_CASE("conv2d: gradients match central finite differences") {
  Rng rng(21);
  T x = T::zeros({5, 5, 2}, true);
  T w = T::zeros({3, 3, 2, 3}, true);
  T b = T::zeros({3}, true);
  fill_uniform(x, rng, -1, 1);
  fill_uniform(w, rng, -0.5, 0.5);
  fill_uniform(b, rng, -0.5, 0.5);
  // weighted sum output keeps the check sensitive to every element
  T probe = T::zeros({5, 5, 3});
  fill_uniform(probe, rng, -1, 1);
  auto fn = [&](Tape<double>* tape) {
    return pidm::mean_all(tape, pidm::mul(tape, pidm::conv2d(tape, x, w, b), probe));
  };
  auto res = gradcheck(fn, {x, w, b});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("grid_sample: identity coordinates reproduce the input") {
  Rng rng(3);
  T x = T::zeros({6, 7, 2});
  fill_uniform(x, rng, 0, 1);
  T c = pidm::identity_coords<double>(6, 7);
  T y = pidm::grid_sample_bilinear<double>(nullptr, x, c);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("grid_sample: +1 row shift translates the interior") {
  Rng rng(4);
  const int h = 6, w = 5, ch = 2;
  T x = T::zeros({h, w, ch});
  fill_uniform(x, rng, 0, 1);
  T c = pidm::identity_coords<double>(h, w);
  for (std::int64_t p = 0; p < h * w; ++p) c.data()[p * 2] += 1.0;  // sample one row down
  T y = pidm::grid_sample_bilinear<double>(nullptr, x, c);
  // direct index oracle: out(y, x) = in(y + 1, x) while in bounds
  for (int yy = 0; yy + 1 < h; ++yy)
    for (int xx = 0; xx < w; ++xx)
      for (int q = 0; q < ch; ++q)
        CHECK(y.data()[pidm::idx3(yy, xx, q, w, ch)] ==
              doctest::Approx(x.data()[pidm::idx3(yy + 1, xx, q, w, ch)]));
}

TEST_CASE("grid_sample: coordinate and image gradients match finite differences") {
  Rng rng(11);
  const int h = 5, w = 5, ch = 2;
  T x = T::zeros({h, w, ch}, true);
  fill_uniform(x, rng, 0, 1);
  T c = pidm::identity_coords<double>(h, w);
  c.set_requires_grad(true);
  // keep sample positions strictly interior so the FD probe stays smooth
  for (std::int64_t p = 0; p < h * w; ++p) {
    c.data()[p * 2 + 0] = std::clamp(c.data()[p * 2 + 0] + rng.uniform(-0.4, 0.4), 0.3, h - 1.3);
    c.data()[p * 2 + 1] = std::clamp(c.data()[p * 2 + 1] + rng.uniform(-0.4, 0.4), 0.3, w - 1.3);
  }
  T probe = T::zeros({h, w, ch});
  fill_uniform(probe, rng, -1, 1);
  auto fn = [&](Tape<double>* tape) {
    return pidm::mean_all(tape, pidm::mul(tape, pidm::grid_sample_bilinear(tape, x, c), probe));
  };
  auto res = gradcheck(fn, {x, c});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gelu endpoint values") {
  T x = T::from({3}, {0.0, 10.0, -10.0});
  T y = pidm::gelu<double>(nullptr, x);
  CHECK(y.data()[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(y.data()[1] - 10.0) < 1e-6);
  CHECK(std::abs(y.data()[2]) < 1e-6);
}

TEST_CASE("gelu gradient matches finite differences") {
  Rng rng(5);
  T x = T::zeros({4, 4, 2}, true);
  fill_uniform(x, rng, -2, 2);
  auto fn = [&](Tape<double>* tape) { return pidm::mean_all(tape, pidm::gelu(tape, x)); };
  CHECK(gradcheck(fn, {x}).max_rel_err < 1e-4);
}

TEST_CASE("instance_norm: unit scale and zero shift standardize each channel") {
  Rng rng(6);
  T x = T::zeros({8, 8, 3});
  fill_uniform(x, rng, -3, 5);
  T sc = T::full({3}, 1.0);
  T sh = T::zeros({3});
  T y = pidm::instance_norm<double>(nullptr, x, sc, sh);
  for (int c = 0; c < 3; ++c) {
    double mu = 0, var = 0;
    for (int p = 0; p < 64; ++p) mu += y.data()[p * 3 + c];
    mu /= 64;
    for (int p = 0; p < 64; ++p) {
      const double d = y.data()[p * 3 + c] - mu;
      var += d * d;
    }
    var /= 64;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("instance_norm: constant channel collapses to the shift") {
  T x = T::full({4, 4, 1}, 2.5);
  T sc = T::full({1}, 3.0);
  T sh = T::full({1}, -0.75);
  T y = pidm::instance_norm<double>(nullptr, x, sc, sh);
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(-0.75));
}

TEST_CASE("instance_norm: single pixel is a degenerate input") {
  T x = T::full({1, 1, 2}, 1.0);
  T sc = T::full({2}, 1.0);
  T sh = T::zeros({2});
  CHECK_THROWS_AS(pidm::instance_norm<double>(nullptr, x, sc, sh), pidm::ShapeError);
}

TEST_CASE("instance_norm gradient matches finite differences") {
  Rng rng(9);
  T x = T::zeros({6, 5, 2}, true);
  T sc = T::zeros({2}, true);
  T sh = T::zeros({2}, true);
  fill_uniform(x, rng, -1, 1);
  fill_uniform(sc, rng, 0.5, 1.5);
  fill_uniform(sh, rng, -0.5, 0.5);
  T probe = T::zeros({6, 5, 2});
  fill_uniform(probe, rng, -1, 1);
  auto fn = [&](Tape<double>* tape) {
    return pidm::mean_all(tape, pidm::mul(tape, pidm::instance_norm(tape, x, sc, sh), probe));
  };
  CHECK(gradcheck(fn, {x, sc, sh}).max_rel_err < 1e-4);
}

TEST_CASE("plumbing ops: l1, concat, relu basics") {
  Rng rng(10);
  T a = T::zeros({3, 3, 2});
  fill_uniform(a, rng, -1, 1);
  CHECK(pidm::l1_loss<double>(nullptr, a, a).item() == doctest::Approx(0.0));

  T b = T::zeros({3, 3, 4});
  fill_uniform(b, rng, -1, 1);
  T cat = pidm::concat_channels<double>(nullptr, a, b);
  CHECK(cat.extent(2) == 6);
  CHECK(cat.data()[0] == a.data()[0]);
  CHECK(cat.data()[2] == b.data()[0]);

  T neg = T::full({2, 2, 1}, -3.0);
  T r = pidm::relu<double>(nullptr, neg);
  for (std::int64_t i = 0; i < r.numel(); ++i) CHECK(r.data()[i] == 0.0);
}

TEST_CASE("concat backward partitions the upstream gradient exactly") {
  Rng rng(12);
  std::vector<T> parts;
  std::vector<int> widths = {1, 3, 2};
  for (int w : widths) {
    T p = T::zeros({4, 5, w}, true);
    fill_uniform(p, rng, -1, 1);
    parts.push_back(p);
  }
  Tape<double> tape;
  T cat = pidm::concat_channels(&tape, parts);
  T probe = T::zeros(cat.shape());
  fill_uniform(probe, rng, -1, 1);
  T loss = pidm::mean_all(&tape, pidm::mul(&tape, cat, probe));
  tape.backward(loss);

  // partition property: every upstream element lands in exactly one part
  std::int64_t part_elems = 0;
  for (auto& p : parts) part_elems += p.numel();
  CHECK(part_elems == cat.numel());
  const double scale = 1.0 / double(cat.numel());
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      int off = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        for (int c = 0; c < widths[k]; ++c) {
          const double expect = probe.data()[pidm::idx3(y, x, off + c, 5, 6)] * scale;
          CHECK(parts[k].grad()[pidm::idx3(y, x, c, 5, widths[k])] == doctest::Approx(expect));
        }
        off += widths[k];
      }
    }
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
  Rng rng(13);
  T a = T::zeros({3, 4, 2}, true);
  T b = T::zeros({3, 4, 2}, true);
  fill_uniform(a, rng, 0.5, 2.0);
  fill_uniform(b, rng, 0.5, 2.0);
  auto fn = [&](Tape<double>* tape) {
    T s = pidm::mul(tape, pidm::add(tape, a, b), pidm::sub(tape, a, b));
    T d = pidm::div(tape, s, pidm::add_const(tape, pidm::mul(tape, b, b), 0.3));
    return pidm::mean_all(tape, d);
  };
  CHECK(gradcheck(fn, {a, b}).max_rel_err < 1e-4);

  // keep |a - b| away from the kink so the finite-difference probe is smooth
  for (std::int64_t i = 0; i < b.numel(); ++i) b.data()[i] = a.data()[i] + 0.2 + 0.1 * (i % 3);
  auto fn2 = [&](Tape<double>* tape) { return pidm::l1_loss(tape, a, b); };
  CHECK(gradcheck(fn2, {a, b}).max_rel_err < 1e-4);
}

TEST_CASE("resampling ops: gradients match finite differences") {
  Rng rng(14);
  T x = T::zeros({4, 4, 2}, true);
  fill_uniform(x, rng, -1, 1);
  T probe4 = T::zeros({2, 2, 2});
  fill_uniform(probe4, rng, -1, 1);
  auto fn_pool = [&](Tape<double>* tape) {
    return pidm::mean_all(tape, pidm::mul(tape, pidm::avgpool2(tape, x), probe4));
  };
  CHECK(gradcheck(fn_pool, {x}).max_rel_err < 1e-4);

  T probe8 = T::zeros({8, 8, 2});
  fill_uniform(probe8, rng, -1, 1);
  auto fn_nn = [&](Tape<double>* tape) {
    return pidm::mean_all(tape, pidm::mul(tape, pidm::upsample_nearest2(tape, x), probe8));
  };
  CHECK(gradcheck(fn_nn, {x}).max_rel_err < 1e-4);

  auto fn_bl = [&](Tape<double>* tape) {
    return pidm::mean_all(tape, pidm::mul(tape, pidm::upsample_bilinear(tape, x, 2, 2), probe8));
  };
  CHECK(gradcheck(fn_bl, {x}).max_rel_err < 1e-4);

  T probe12 = T::zeros({12, 8, 2});
  fill_uniform(probe12, rng, -1, 1);
  auto fn_bc = [&](Tape<double>* tape) {
    return pidm::mean_all(tape, pidm::mul(tape, pidm::upsample_bicubic(tape, x, 3, 2), probe12));
  };
  CHECK(gradcheck(fn_bc, {x}).max_rel_err < 1e-4);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  T p = T::from({3}, {1.0, -2.0, 0.5}, true);
  pidm::Adam<double> opt({p}, 5e-4);
  opt.step();  // grads start at zero
  CHECK(p.data()[0] == doctest::Approx(1.0));
  CHECK(p.data()[1] == doctest::Approx(-2.0));
  CHECK(p.data()[2] == doctest::Approx(0.5));
}

TEST_CASE("adam: first step against the closed form") {
  const double g = 0.37, lr = 5e-4, eps = 1e-8;
  T p = T::from({1}, {2.0}, true);
  pidm::Adam<double> opt({p}, lr);
  p.grad()[0] = g;
  opt.step();
  // bias-corrected first step: mhat = g, vhat = g^2
  const double expect = 2.0 - lr * g / (std::sqrt(g * g) + eps);
  CHECK(p.data()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(p.grad()[0] == 0.0);  // accumulator cleared
}

TEST_CASE("adam: quadratic bowl descends towards zero") {
  // independent reference implementation, written from the update equations
  double rp = 1.0, rm = 0.0, rv = 0.0;
  const double lr = 5e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 2000; ++t) {
    const double g = 2.0 * rp;
    rm = b1 * rm + (1 - b1) * g;
    rv = b2 * rv + (1 - b2) * g * g;
    const double mh = rm / (1 - std::pow(b1, t));
    const double vh = rv / (1 - std::pow(b2, t));
    rp -= lr * mh / (std::sqrt(vh) + eps);
  }
  // oracle-computed endpoint (cross-checked against torch.optim.Adam)
  CHECK(rp == doctest::Approx(0.24572867001586576).epsilon(1e-10));

  T p = T::from({1}, {1.0}, true);
  pidm::Adam<double> opt({p}, lr);
  double prev = 1.0;
  for (int t = 1; t <= 2000; ++t) {
    p.grad()[0] = 2.0 * p.data()[0];
    opt.step();
    CHECK(p.data()[0] <= prev);  // monotone descent on the bowl
    prev = p.data()[0];
  }
  CHECK(p.data()[0] > 0.0);
  CHECK(p.data()[0] == doctest::Approx(rp).epsilon(1e-9));
}

TEST_CASE("adam: NaN gradient aborts with diagnostics") {
  T p = T::from({2}, {1.0, 1.0}, true);
  pidm::Adam<double> opt({p}, 1e-3);
  p.grad()[0] = std::nan("");
  CHECK_THROWS_AS(opt.step(), pidm::NumericError);
}

TEST_CASE("composed graphs evaluate deterministically") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    T x = T::zeros({8, 8, 3}, true);
    T w = T::zeros({3, 3, 3, 4}, true);
    T b = T::zeros({4}, true);
    T sc = T::full({4}, 1.0, true);
    T sh = T::zeros({4}, true);
    fill_uniform(x, rng, -1, 1);
    fill_uniform(w, rng, -0.3, 0.3);
    Tape<double> tape;
    T y = pidm::gelu(&tape, pidm::instance_norm(&tape, pidm::conv2d(&tape, x, w, b), sc, sh));
    T loss = pidm::mean_all(&tape, pidm::mul(&tape, y, y));
    tape.backward(loss);
    std::vector<double> out;
    out.push_back(loss.item());
    for (std::int64_t i = 0; i < w.numel(); ++i) out.push_back(w.grad()[i]);
    for (std::int64_t i = 0; i < x.numel(); ++i) out.push_back(x.grad()[i]);
    return out;
  };
  auto a = run(99);
  auto b = run(99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bit identical
}
