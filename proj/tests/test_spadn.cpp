#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "pidm/model.hpp"
#include "pidm/spadn.hpp"

using pidm::Rng;
using pidm::Tape;
using pidm::Tensor;
using pidm::WarpGen;
using pidm::testing::fill_uniform;
using pidm::testing::gradcheck;

using T = Tensor<double>;

TEST_CASE("truncate: boundary-inclusive pass band at eps = 3") {
  T x = T::from({4}, {2.5, -4.0, 3.0, -3.0});
  T y = pidm::truncate<double>(nullptr, x, 3.0);
  CHECK(y.data()[0] == 2.5);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 3.0);
  CHECK(y.data()[3] == -3.0);
}

TEST_CASE("truncate gradient is identity inside, zero outside") {
  T x = T::from({3}, {1.0, 5.0, -2.0}, true);
  Tape<double> tape;
  T y = pidm::truncate(&tape, x, 3.0);
  T loss = pidm::mean_all(&tape, y);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(1.0 / 3));
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == doctest::Approx(1.0 / 3));
}

TEST_CASE("warp field is exactly zero at initialization") {
  Rng rng(42);
  WarpGen<double> gen = WarpGen<double>::make(rng);
  T img = T::zeros({32, 32, 3});
  Rng rng2(43);
  fill_uniform(img, rng2, 0, 1);
  T field = pidm::generate_warp_field<double>(nullptr, gen, img);
  CHECK(field.extent(0) == 32);
  CHECK(field.extent(1) == 32);
  CHECK(field.extent(2) == 2);
  for (std::int64_t i = 0; i < field.numel(); ++i) CHECK(field.data()[i] == 0.0);
}

TEST_CASE("warp field entries always respect the truncation threshold") {
  Rng rng(7);
  WarpGen<double> gen = WarpGen<double>::make(rng);
  // force large outputs through the final projection
  fill_uniform(gen.proj.w, rng, -5, 5);
  fill_uniform(gen.proj.b, rng, -5, 5);
  T img = T::zeros({16, 16, 2});
  fill_uniform(img, rng, 0, 1);
  T field = pidm::generate_warp_field<double>(nullptr, gen, img);
  for (std::int64_t i = 0; i < field.numel(); ++i) CHECK(std::abs(field.data()[i]) <= 3.0);
}

TEST_CASE("warp field generation is deterministic for a fixed seed") {
  auto run = []() {
    Rng rng(99);
    WarpGen<double> gen = WarpGen<double>::make(rng);
    fill_uniform(gen.proj.w, rng, -1, 1);
    T img = T::zeros({32, 32, 3});
    Rng rng2(100);
    fill_uniform(img, rng2, 0, 1);
    return pidm::generate_warp_field<double>(nullptr, gen, img);
  };
  T a = run();
  T b = run();
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("warp generator rejects images below the downsampling depth") {
  Rng rng(1);
  WarpGen<double> gen = WarpGen<double>::make(rng);
  T img = T::zeros({12, 12, 1});
  CHECK_THROWS_AS(pidm::generate_warp_field<double>(nullptr, gen, img), pidm::ShapeError);
}

TEST_CASE("apply_warp: zero field is the identity") {
  Rng rng(3);
  T img = T::zeros({8, 9, 2});
  fill_uniform(img, rng, 0, 1);
  T field = T::zeros({8, 9, 2});
  T out = pidm::apply_warp<double>(nullptr, img, field);
  for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(out.data()[i] == img.data()[i]);
}

TEST_CASE("apply_warp: constant (1, 0) field shifts the image one row") {
  Rng rng(4);
  const int H = 8, W = 6, C = 2;
  T img = T::zeros({H, W, C});
  fill_uniform(img, rng, 0, 1);
  T field = T::zeros({H, W, 2});
  for (int p = 0; p < H * W; ++p) field.data()[p * 2] = 1.0;
  T out = pidm::apply_warp<double>(nullptr, img, field);
  for (int y = 0; y + 1 < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int q = 0; q < C; ++q)
        CHECK(out.data()[pidm::idx3(y, x, q, W, C)] ==
              doctest::Approx(img.data()[pidm::idx3(y + 1, x, q, W, C)]));
}

TEST_CASE("apply_warp: smooth field round-trips through its inverse on the interior") {
  const int H = 32, W = 32;
  const double pi = 3.14159265358979323846;
  // smooth low-frequency image
  T img = T::zeros({H, W, 1});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      img.data()[y * W + x] = 0.5 + 0.4 * std::sin(2 * pi * y / 32.0) * std::cos(2 * pi * x / 32.0);
  T fwd = T::zeros({H, W, 2});
  T inv = T::zeros({H, W, 2});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double dy = 0.8 * std::sin(2 * pi * x / 32.0);
      const double dx = 0.8 * std::cos(2 * pi * y / 32.0);
      fwd.data()[(y * W + x) * 2 + 0] = dy;
      fwd.data()[(y * W + x) * 2 + 1] = dx;
      inv.data()[(y * W + x) * 2 + 0] = -dy;
      inv.data()[(y * W + x) * 2 + 1] = -dx;
    }
  T warped = pidm::apply_warp<double>(nullptr, img, fwd);
  T back = pidm::apply_warp<double>(nullptr, warped, inv);
  // tolerance picked from an oracle run of this exact fixture (max interior
  // error 1.6e-2 for a 0.8 px sinusoidal field on this image)
  double worst = 0;
  for (int y = 4; y < H - 4; ++y)
    for (int x = 4; x < W - 4; ++x)
      worst = std::max(worst, std::abs(back.data()[y * W + x] - img.data()[y * W + x]));
  CHECK(worst < 2e-2);
}

TEST_CASE("spadn: identity configuration reproduces a smooth input") {
  const int H = 32, W = 32;
  const double pi = 3.14159265358979323846;
  pidm::PidmConfig cfg;
  cfg.bands_hsi = 4;
  cfg.bands_msi = 1;
  cfg.scale_y = cfg.scale_x = 1;
  cfg.kernel_size = 25;
  cfg.seed = 5;
  auto model = pidm::PidmModel<double>::init(cfg);
  model.kparams.p.data()[2] = 0.1;  // delta-like spread
  model.kparams.p.data()[3] = 0.1;
  T img = T::zeros({H, W, 1});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      img.data()[y * W + x] = 0.5 + 0.3 * std::sin(2 * pi * y / 64.0) * std::sin(2 * pi * x / 64.0);
  T out = model.spatial_forward(nullptr, img);
  double worst = 0;
  for (std::int64_t i = 0; i < img.numel(); ++i)
    worst = std::max(worst, std::abs(out.data()[i] - img.data()[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("spadn: 64x64x3 with factor 4 yields 16x16x3") {
  pidm::PidmConfig cfg;
  cfg.bands_hsi = 3;
  cfg.bands_msi = 3;
  cfg.scale_y = cfg.scale_x = 4;
  cfg.seed = 6;
  auto model = pidm::PidmModel<double>::init(cfg);
  Rng rng(7);
  T img = T::zeros({64, 64, 3});
  fill_uniform(img, rng, 0, 1);
  T out = model.spatial_forward(nullptr, img);
  CHECK(out.extent(0) == 16);
  CHECK(out.extent(1) == 16);
  CHECK(out.extent(2) == 3);
}

TEST_CASE("spadn at init degrades exactly as blur + decimate") {
  pidm::PidmConfig cfg;
  cfg.bands_hsi = 3;
  cfg.bands_msi = 3;
  cfg.scale_y = cfg.scale_x = 2;
  cfg.seed = 8;
  auto model = pidm::PidmModel<double>::init(cfg);
  Rng rng(9);
  T img = T::zeros({32, 32, 3});
  fill_uniform(img, rng, 0, 1);
  T via_model = model.spatial_forward(nullptr, img);
  T k = pidm::generate_kernel<double>(nullptr, model.kparams);
  T direct = pidm::blur_and_decimate<double>(nullptr, img, k, {2, 2, 0});
  for (std::int64_t i = 0; i < via_model.numel(); ++i)
    CHECK(via_model.data()[i] == direct.data()[i]);  // bit-identical
}

TEST_CASE("spadn warp field is channel-count agnostic") {
  pidm::PidmConfig cfg;
  cfg.bands_hsi = 6;
  cfg.bands_msi = 2;
  cfg.scale_y = cfg.scale_x = 2;
  cfg.seed = 10;
  auto model = pidm::PidmModel<double>::init(cfg);
  Rng rng(11);
  fill_uniform(model.wgen.proj.w, rng, -0.5, 0.5);

  // a 2-channel and a 6-channel cube engineered to share the channel mean
  T narrow = T::zeros({16, 16, 2});
  fill_uniform(narrow, rng, 0, 1);
  T wide = T::zeros({16, 16, 6});
  for (int p = 0; p < 16 * 16; ++p) {
    const double m = 0.5 * (narrow.data()[p * 2] + narrow.data()[p * 2 + 1]);
    for (int q = 0; q < 6; ++q) wide.data()[p * 6 + q] = (q % 2) ? 2 * m - 0.3 : 0.3;
  }
  // force equal means exactly
  for (int p = 0; p < 16 * 16; ++p) {
    double mn = 0, mw = 0;
    for (int q = 0; q < 2; ++q) mn += narrow.data()[p * 2 + q] / 2;
    for (int q = 0; q < 6; ++q) mw += wide.data()[p * 6 + q] / 6;
    wide.data()[p * 6] += (mn - mw) * 6;
  }
  T fa = pidm::generate_warp_field<double>(nullptr, model.wgen, narrow);
  T fb = pidm::generate_warp_field<double>(nullptr, model.wgen, wide);
  for (std::int64_t i = 0; i < fa.numel(); ++i)
    CHECK(fa.data()[i] == doctest::Approx(fb.data()[i]).epsilon(1e-12));
}

TEST_CASE("spadn pipeline matches a scripted reference (warp, blur, decimate)") {
  pidm::PidmConfig cfg;
  cfg.bands_hsi = 2;
  cfg.bands_msi = 2;
  cfg.scale_y = cfg.scale_x = 2;
  cfg.kernel_size = 9;
  cfg.seed = 12;
  auto model = pidm::PidmModel<double>::init(cfg);
  Rng rng(13);
  fill_uniform(model.wgen.proj.w, rng, -0.3, 0.3);
  model.kparams.p.data()[0] = -1.0;
  model.kparams.p.data()[2] = 1.2;
  model.kparams.p.data()[3] = 2.1;
  model.kparams.p.data()[4] = 0.5;

  const int H = 16, W = 16, C = 2;
  T img = T::zeros({H, W, C});
  fill_uniform(img, rng, 0, 1);
  T out = model.spatial_forward(nullptr, img);

  // scripted reference: reuse the generated field, then re-derive the rest
  // with plain loops
  T field = pidm::generate_warp_field<double>(nullptr, model.wgen, img);
  std::vector<double> warped(std::size_t(H) * W * C, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double sy = std::clamp(y + field.data()[(y * W + x) * 2 + 0], 0.0, double(H - 1));
      const double sx = std::clamp(x + field.data()[(y * W + x) * 2 + 1], 0.0, double(W - 1));
      const int y0 = std::min(int(std::floor(sy)), H - 1), x0 = std::min(int(std::floor(sx)), W - 1);
      const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const double fy = sy - y0, fx = sx - x0;
      for (int q = 0; q < C; ++q) {
        const double top = img.data()[pidm::idx3(y0, x0, q, W, C)] * (1 - fx) +
                           img.data()[pidm::idx3(y0, x1, q, W, C)] * fx;
        const double bot = img.data()[pidm::idx3(y1, x0, q, W, C)] * (1 - fx) +
                           img.data()[pidm::idx3(y1, x1, q, W, C)] * fx;
        warped[std::size_t(pidm::idx3(y, x, q, W, C))] = top * (1 - fy) + bot * fy;
      }
    }
  T k = pidm::generate_kernel<double>(nullptr, model.kparams);
  const int r = cfg.kernel_size / 2, n = cfg.kernel_size;
  for (int yo = 0; yo < H / 2; ++yo)
    for (int xo = 0; xo < W / 2; ++xo)
      for (int q = 0; q < C; ++q) {
        double acc = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int sy = std::clamp(yo * 2 - dy, 0, H - 1);
            const int sx = std::clamp(xo * 2 - dx, 0, W - 1);
            acc += k.data()[(dy + r) * n + (dx + r)] *
                   warped[std::size_t(pidm::idx3(sy, sx, q, W, C))];
          }
        CHECK(out.data()[pidm::idx3(yo, xo, q, W / 2, C)] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("spadn composite gradients match finite differences at 16x16") {
  pidm::PidmConfig cfg;
  cfg.bands_hsi = 2;
  cfg.bands_msi = 2;
  cfg.scale_y = cfg.scale_x = 2;
  cfg.kernel_size = 7;
  cfg.seed = 14;
  auto model = pidm::PidmModel<double>::init(cfg);
  Rng rng(15);
  fill_uniform(model.wgen.proj.w, rng, -0.2, 0.2);
  // keep every sample coordinate away from integer positions: bilinear
  // sampling is piecewise linear and the subgradient at a knot legitimately
  // disagrees with the central difference
  model.wgen.proj.b.data()[0] = 0.137;
  model.wgen.proj.b.data()[1] = -0.119;

  T img = T::zeros({16, 16, 2});
  fill_uniform(img, rng, 0, 1);
  T probe = T::zeros({8, 8, 2});
  fill_uniform(probe, rng, -1, 1);
  auto fn = [&](Tape<double>* tape) {
    return pidm::mean_all(tape, pidm::mul(tape, model.spatial_forward(tape, img), probe));
  };
  auto params = model.params();
  auto res = gradcheck(fn, params, 1e-6, /*sample_stride=*/7);
  CHECK(res.max_rel_err < 1e-3);
}
