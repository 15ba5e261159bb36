#pragma once

// Differentiable single-scale SSIM: 11x11 Gaussian window (sigma 1.5),
// stability constants (0.01)^2 and (0.03)^2 for unit dynamic range, statistics
// over valid windows, averaged over windows and channels. Built from tape ops
// so the training loss backpropagates through it.

#include <cmath>

#include "pidm/ops.hpp"

namespace pidm {

template <class S>
Tensor<S> gaussian_window(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ShapeError("gaussian_window: size must be odd");
  Tensor<S> w = Tensor<S>::zeros({size, size});
  const int r = size / 2;
  double sum = 0.0;
  std::vector<double> vals(std::size_t(size) * size);
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) {
      const double v = std::exp(-(double(i) * i + double(j) * j) / (2.0 * sigma * sigma));
      vals[std::size_t((i + r) * size + (j + r))] = v;
      sum += v;
    }
  for (std::int64_t i = 0; i < w.numel(); ++i) w.data()[i] = S(vals[std::size_t(i)] / sum);
  return w;
}

template <class S>
Tensor<S> ssim(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b, int win = 11,
               double sigma = 1.5) {
  expect_rank(a, 3, "ssim");
  expect_same_shape(a, b, "ssim");
  if (a.extent(0) < win || a.extent(1) < win)
    throw ShapeError("ssim: image " + shape_str(a.shape()) + " smaller than the " +
                     std::to_string(win) + "x" + std::to_string(win) + " window");
  const S c1 = S(0.01 * 0.01);
  const S c2 = S(0.03 * 0.03);
  Tensor<S> w = gaussian_window<S>(win, sigma);

  Tensor<S> mu_a = depthwise_valid(tape, a, w);
  Tensor<S> mu_b = depthwise_valid(tape, b, w);
  Tensor<S> raw_aa = depthwise_valid(tape, mul(tape, a, a), w);
  Tensor<S> raw_bb = depthwise_valid(tape, mul(tape, b, b), w);
  Tensor<S> raw_ab = depthwise_valid(tape, mul(tape, a, b), w);

  Tensor<S> mu_ab = mul(tape, mu_a, mu_b);
  Tensor<S> var_a = sub(tape, raw_aa, mul(tape, mu_a, mu_a));
  Tensor<S> var_b = sub(tape, raw_bb, mul(tape, mu_b, mu_b));
  Tensor<S> cov = sub(tape, raw_ab, mu_ab);

  Tensor<S> num = mul(tape, add_const(tape, scale(tape, mu_ab, S(2)), c1),
                      add_const(tape, scale(tape, cov, S(2)), c2));
  Tensor<S> den =
      mul(tape, add_const(tape, add(tape, mul(tape, mu_a, mu_a), mul(tape, mu_b, mu_b)), c1),
          add_const(tape, add(tape, var_a, var_b), c2));
  return mean_all(tape, div(tape, num, den));
}

}  // namespace pidm
