#pragma once

// Shifted anisotropic Gaussian blur kernel and the blur-then-decimate
// operator. The five kernel parameters live in one tensor so they plug into
// the optimizer like any other weight: [alpha_y, alpha_x, delta_y, delta_x,
// beta].

#include <algorithm>
#include <cmath>
#include <memory>

#include "pidm/ops.hpp"
#include "pidm/tensor.hpp"

namespace pidm {

template <class S>
struct KernelParams {
  Tensor<S> p;  // [alpha_y, alpha_x, delta_y, delta_x, beta]
  int size = 25;

  static KernelParams make(S ay, S ax, S dy, S dx, S beta, int size = 25,
                           bool requires_grad = false) {
    if (size % 2 == 0) throw ShapeError("kernel size must be odd");
    KernelParams k;
    k.p = Tensor<S>::from({5}, {ay, ax, dy, dx, beta}, requires_grad);
    k.size = size;
    return k;
  }

  S alpha_y() const { return p.data()[0]; }
  S alpha_x() const { return p.data()[1]; }
  S delta_y() const { return p.data()[2]; }
  S delta_x() const { return p.data()[3]; }
  S beta() const { return p.data()[4]; }

  // Feasibility box: delta in [0.1, size/2], |alpha| <= size/4. Applied after
  // every optimizer step.
  void project() {
    S* v = p.data();
    const S dmax = S(size) / S(2);
    const S amax = S(size) / S(4);
    v[0] = std::clamp(v[0], -amax, amax);
    v[1] = std::clamp(v[1], -amax, amax);
    v[2] = std::clamp(v[2], S(0.1), dmax);
    v[3] = std::clamp(v[3], S(0.1), dmax);
  }
};

struct DownsampleSpec {
  int sy = 1;
  int sx = 1;
  int phase = 0;
};

// Evaluates the Gaussian exponent on the centered integer grid offset by
// (alpha_y, alpha_x), with the symmetric shape matrix
//   Sigma = R(beta) diag(delta_y, delta_x) R(beta)^T,
// then normalizes to unit sum. Differentiable in all five parameters.
//
// With q = -(A u^2 + 2 B u v + C v^2)/2 for the inverse entries
// A, B, C of Sigma and u = i - alpha_y, v = j - alpha_x, the backward step
// chains d(normalized)/d(exponent) through the unit-sum normalization and the
// closed-form partials of A, B, C in delta_y, delta_x, beta.
template <class S>
Tensor<S> generate_kernel(Tape<S>* tape, const KernelParams<S>& kp) {
  const int n = kp.size;
  if (n % 2 == 0) throw ShapeError("generate_kernel: size must be odd");
  const S dy = kp.delta_y(), dx = kp.delta_x();
  if (!(dy > S(0)) || !(dx > S(0)))
    throw UsageError("generate_kernel: spreads must be strictly positive");

  const double ay = double(kp.alpha_y()), ax = double(kp.alpha_x());
  const double c = std::cos(double(kp.beta())), s = std::sin(double(kp.beta()));
  const double iy = 1.0 / double(dy), ix = 1.0 / double(dx);
  // inverse shape matrix entries
  const double A = c * c * iy + s * s * ix;
  const double B = c * s * (iy - ix);
  const double C = s * s * iy + c * c * ix;

  const int r = n / 2;
  const bool track = tracked(tape, {&kp.p});
  Tensor<S> out = make_output<S>({n, n}, track);
  auto expo = std::make_shared<std::vector<double>>(std::size_t(n) * n);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) {
      const double u = double(i) - ay;
      const double v = double(j) - ax;
      const double e = std::exp(-0.5 * (A * u * u + 2.0 * B * u * v + C * v * v));
      (*expo)[std::size_t((i + r) * n + (j + r))] = e;
      sum += e;
    }
  S* po = out.data();
  for (std::int64_t i = 0; i < std::int64_t(n) * n; ++i) po[i] = S((*expo)[std::size_t(i)] / sum);

  if (track) {
    Tensor<S> params = kp.p;
    tape->record([params, out, expo, sum, n, r, ay, ax, c, s, iy, ix, A, B, C]() mutable {
      const S* g = out.grad();
      const S* k = out.data();
      // d(loss)/d(e_ij) through k = e / sum(e)
      double gdotk = 0.0;
      for (std::int64_t i = 0; i < std::int64_t(n) * n; ++i) gdotk += double(g[i]) * double(k[i]);
      double d_ay = 0, d_ax = 0, dA = 0, dB = 0, dC = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const std::size_t q = std::size_t((i + r) * n + (j + r));
          const double ge = (double(g[q]) - gdotk) / sum;
          const double gq = ge * (*expo)[q];  // d loss / d exponent
          const double u = double(i) - ay;
          const double v = double(j) - ax;
          d_ay += gq * (A * u + B * v);  // dq/du * du/dalpha_y, dq/du = -(Au+Bv)
          d_ax += gq * (B * u + C * v);
          dA += gq * (-0.5 * u * u);
          dB += gq * (-u * v);
          dC += gq * (-0.5 * v * v);
        }
      const double iy2 = iy * iy, ix2 = ix * ix;
      const double d_dy = dA * (-c * c * iy2) + dB * (-c * s * iy2) + dC * (-s * s * iy2);
      const double d_dx = dA * (-s * s * ix2) + dB * (c * s * ix2) + dC * (-c * c * ix2);
      const double d_beta = dA * (2.0 * c * s * (ix - iy)) + dB * ((c * c - s * s) * (iy - ix)) +
                            dC * (2.0 * c * s * (iy - ix));
      S* gp = params.grad();
      gp[0] += S(d_ay);
      gp[1] += S(d_ax);
      gp[2] += S(d_dy);
      gp[3] += S(d_dx);
      gp[4] += S(d_beta);
    });
  }
  return out;
}

// (img * k) followed by interval decimation. True convolution (the kernel is
// flipped), one shared 2-D kernel per channel, replicate borders. Only the
// retained samples are evaluated.
template <class S>
Tensor<S> blur_and_decimate(Tape<S>* tape, const Tensor<S>& img, const Tensor<S>& kernel,
                            const DownsampleSpec& spec) {
  expect_rank(img, 3, "blur_and_decimate image");
  expect_rank(kernel, 2, "blur_and_decimate kernel");
  const int H = img.extent(0), W = img.extent(1), c = img.extent(2);
  const int kh = kernel.extent(0), kw = kernel.extent(1);
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("blur_and_decimate: kernel extents must be odd");
  if (spec.sy < 1 || spec.sx < 1) throw ShapeError("blur_and_decimate: factors must be >= 1");
  if (H % spec.sy || W % spec.sx)
    throw ShapeError("blur_and_decimate: image " + shape_str(img.shape()) +
                     " not divisible by factors " + std::to_string(spec.sy) + "x" +
                     std::to_string(spec.sx));
  if (spec.phase < 0 || spec.phase >= std::min(spec.sy, spec.sx))
    throw ShapeError("blur_and_decimate: phase out of range");
  const int h = H / spec.sy, w = W / spec.sx;
  const int ry = kh / 2, rx = kw / 2;
  const int py = spec.phase, px = spec.phase;

  const bool track = tracked(tape, {&img, &kernel});
  Tensor<S> out = make_output<S>({h, w, c}, track);
  const S* in = img.data();
  const S* k = kernel.data();
  S* po = out.data();
  for (int yo = 0; yo < h; ++yo) {
    const int Y = py + yo * spec.sy;
    for (int xo = 0; xo < w; ++xo) {
      const int X = px + xo * spec.sx;
      S* op = po + idx3(yo, xo, 0, w, c);
      for (int q = 0; q < c; ++q) op[q] = S(0);
      for (int dy = -ry; dy <= ry; ++dy) {
        const int sy = std::clamp(Y - dy, 0, H - 1);
        for (int dx = -rx; dx <= rx; ++dx) {
          const int sx = std::clamp(X - dx, 0, W - 1);
          const S kv = k[(dy + ry) * kw + (dx + rx)];
          const S* ip = in + idx3(sy, sx, 0, W, c);
          for (int q = 0; q < c; ++q) op[q] += kv * ip[q];
        }
      }
    }
  }

  if (track) {
    const int sy_f = spec.sy, sx_f = spec.sx;
    tape->record([img, kernel, out, H, W, c, h, w, kh, kw, ry, rx, py, px, sy_f, sx_f]() mutable {
      const S* g = out.grad();
      const S* in = img.data();
      const S* k = kernel.data();
      const bool need_gi = img.requires_grad();
      const bool need_gk = kernel.requires_grad();
      S* gi = need_gi ? img.grad() : nullptr;
      S* gk = need_gk ? kernel.grad() : nullptr;
      for (int yo = 0; yo < h; ++yo) {
        const int Y = py + yo * sy_f;
        for (int xo = 0; xo < w; ++xo) {
          const int X = px + xo * sx_f;
          const S* gr = g + idx3(yo, xo, 0, w, c);
          for (int dy = -ry; dy <= ry; ++dy) {
            const int sy = std::clamp(Y - dy, 0, H - 1);
            for (int dx = -rx; dx <= rx; ++dx) {
              const int sx = std::clamp(X - dx, 0, W - 1);
              const std::int64_t ib = idx3(sy, sx, 0, W, c);
              const int kq = (dy + ry) * kw + (dx + rx);
              if (need_gi) {
                const S kv = k[kq];
                for (int q = 0; q < c; ++q) gi[ib + q] += kv * gr[q];
              }
              if (need_gk) {
                S acc = 0;
                for (int q = 0; q < c; ++q) acc += in[ib + q] * gr[q];
                gk[kq] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace pidm
