#pragma once

// Differentiable building blocks. Every op returns a fresh tensor and, when a
// tape is supplied and an input is tracked, records its backward step.
//
// Convolution-style ops use replicate borders throughout. Backward loops are
// written one-writer-per-element with fixed accumulation order, so repeated
// runs are bit-identical.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "pidm/tensor.hpp"

namespace pidm {

template <class S>
inline void expect_rank(const Tensor<S>& t, int r, const char* what) {
  if (t.rank() != r)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) +
                     " tensor, got " + shape_str(t.shape()));
}

template <class S>
inline void expect_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

template <class S>
inline Tensor<S> make_output(const Shape& shape, bool track) {
  return Tensor<S>::zeros(shape, track);
}

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <class S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  expect_same_shape(a, b, "add");
  const bool track = tracked(tape, {&a, &b});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (track) {
    tape->record([a, b, out]() mutable {
      const S* g = out.grad();
      const std::int64_t n = out.numel();
      if (a.requires_grad()) {
        S* ga = a.grad();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  expect_same_shape(a, b, "sub");
  const bool track = tracked(tape, {&a, &b});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (track) {
    tape->record([a, b, out]() mutable {
      const S* g = out.grad();
      const std::int64_t n = out.numel();
      if (a.requires_grad()) {
        S* ga = a.grad();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  expect_same_shape(a, b, "mul");
  const bool track = tracked(tape, {&a, &b});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (track) {
    tape->record([a, b, out]() mutable {
      const S* g = out.grad();
      const S* pa = a.data();
      const S* pb = b.data();
      const std::int64_t n = out.numel();
      if (a.requires_grad()) {
        S* ga = a.grad();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> div(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  expect_same_shape(a, b, "div");
  const bool track = tracked(tape, {&a, &b});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
  if (track) {
    tape->record([a, b, out]() mutable {
      const S* g = out.grad();
      const S* pa = a.data();
      const S* pb = b.data();
      const std::int64_t n = out.numel();
      if (a.requires_grad()) {
        S* ga = a.grad();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i] * pa[i] / (pb[i] * pb[i]);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(Tape<S>* tape, const Tensor<S>& a, S k) {
  const bool track = tracked(tape, {&a});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * k;
  if (track) {
    tape->record([a, out, k]() mutable {
      const S* g = out.grad();
      S* ga = a.grad();
      const std::int64_t n = out.numel();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * k;
    });
  }
  return out;
}

template <class S>
Tensor<S> add_const(Tape<S>* tape, const Tensor<S>& a, S k) {
  const bool track = tracked(tape, {&a});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + k;
  if (track) {
    tape->record([a, out]() mutable {
      const S* g = out.grad();
      S* ga = a.grad();
      const std::int64_t n = out.numel();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations

template <class S>
Tensor<S> relu(Tape<S>* tape, const Tensor<S>& a) {
  const bool track = tracked(tape, {&a});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
  if (track) {
    tape->record([a, out]() mutable {
      const S* g = out.grad();
      const S* pa = a.data();
      S* ga = a.grad();
      const std::int64_t n = out.numel();
      for (std::int64_t i = 0; i < n; ++i)
        if (pa[i] > S(0)) ga[i] += g[i];
    });
  }
  return out;
}

// Exact erf form: gelu(x) = x * Phi(x). The normal cdf values are kept for
// the backward step, which needs Phi(x) + x * phi(x).
template <class S>
Tensor<S> gelu(Tape<S>* tape, const Tensor<S>& a) {
  const bool track = tracked(tape, {&a});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  auto cdf = std::make_shared<std::vector<S>>(std::size_t(n));
  constexpr S inv_sqrt2 = S(0.70710678118654752440084436210485);
  for (std::int64_t i = 0; i < n; ++i) {
    const S c = S(0.5) * (S(1) + S(std::erf(pa[i] * inv_sqrt2)));
    (*cdf)[std::size_t(i)] = c;
    po[i] = pa[i] * c;
  }
  if (track) {
    tape->record([a, out, cdf]() mutable {
      constexpr S inv_sqrt2pi = S(0.39894228040143267793994605993438);
      const S* g = out.grad();
      const S* pa = a.data();
      S* ga = a.grad();
      const std::int64_t n = out.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        const S x = pa[i];
        const S pdf = inv_sqrt2pi * S(std::exp(S(-0.5) * x * x));
        ga[i] += g[i] * ((*cdf)[std::size_t(i)] + x * pdf);
      }
    });
  }
  return out;
}

// tau_eps: pass entries with |t| <= eps, zero the rest. Subderivative is the
// identity inside and zero outside, boundary inclusive.
template <class S>
Tensor<S> truncate(Tape<S>* tape, const Tensor<S>& a, S eps) {
  if (!(eps > S(0))) throw UsageError("truncate: eps must be positive");
  const bool track = tracked(tape, {&a});
  Tensor<S> out = make_output<S>(a.shape(), track);
  const S* pa = a.data();
  S* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = std::abs(pa[i]) <= eps ? pa[i] : S(0);
  if (track) {
    tape->record([a, out, eps]() mutable {
      const S* g = out.grad();
      const S* pa = a.data();
      S* ga = a.grad();
      const std::int64_t n = out.numel();
      for (std::int64_t i = 0; i < n; ++i)
        if (std::abs(pa[i]) <= eps) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// channel plumbing

template <class S>
Tensor<S> concat_channels(Tape<S>* tape, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  expect_rank(parts[0], 3, "concat_channels");
  const int h = parts[0].extent(0), w = parts[0].extent(1);
  int ctot = 0;
  bool track = false;
  for (const auto& p : parts) {
    expect_rank(p, 3, "concat_channels");
    if (p.extent(0) != h || p.extent(1) != w)
      throw ShapeError("concat_channels: spatial extents differ");
    ctot += p.extent(2);
    track = track || tracked(tape, {&p});
  }
  Tensor<S> out = make_output<S>({h, w, ctot}, track);
  S* po = out.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::int64_t base = idx3(0, x, 0, w, ctot) + std::int64_t(y) * w * ctot;
      int off = 0;
      for (const auto& p : parts) {
        const int pc = p.extent(2);
        const S* pp = p.data() + idx3(y, x, 0, w, pc);
        for (int c = 0; c < pc; ++c) po[base + off + c] = pp[c];
        off += pc;
      }
    }
  if (track) {
    tape->record([parts, out, h, w, ctot]() mutable {
      const S* g = out.grad();
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const S* gr = g + idx3(y, x, 0, w, ctot);
          int off = 0;
          for (auto& p : parts) {
            const int pc = p.extent(2);
            if (p.requires_grad()) {
              S* gp = p.grad() + idx3(y, x, 0, w, pc);
              for (int c = 0; c < pc; ++c) gp[c] += gr[off + c];
            }
            off += pc;
          }
        }
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_channels(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  return concat_channels(tape, std::vector<Tensor<S>>{a, b});
}

// h x w x c -> h x w x 1 mean over channels
template <class S>
Tensor<S> channel_mean(Tape<S>* tape, const Tensor<S>& a) {
  expect_rank(a, 3, "channel_mean");
  const int h = a.extent(0), w = a.extent(1), c = a.extent(2);
  const bool track = tracked(tape, {&a});
  Tensor<S> out = make_output<S>({h, w, 1}, track);
  const S* pa = a.data();
  S* po = out.data();
  const S inv = S(1) / S(c);
  for (std::int64_t p = 0; p < std::int64_t(h) * w; ++p) {
    S s = 0;
    for (int k = 0; k < c; ++k) s += pa[p * c + k];
    po[p] = s * inv;
  }
  if (track) {
    tape->record([a, out, c, inv]() mutable {
      const S* g = out.grad();
      S* ga = a.grad();
      const std::int64_t np = out.numel();
      for (std::int64_t p = 0; p < np; ++p) {
        const S gv = g[p] * inv;
        for (int k = 0; k < c; ++k) ga[p * c + k] += gv;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <class S>
Tensor<S> mean_all(Tape<S>* tape, const Tensor<S>& a) {
  const bool track = tracked(tape, {&a});
  Tensor<S> out = make_output<S>({1}, track);
  const S* pa = a.data();
  const std::int64_t n = a.numel();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += double(pa[i]);
  out.data()[0] = S(acc / double(n));
  if (track) {
    tape->record([a, out]() mutable {
      const S g = out.grad()[0] / S(a.numel());
      S* ga = a.grad();
      const std::int64_t n = a.numel();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

// mean absolute difference; subderivative of |.| at zero is zero
template <class S>
Tensor<S> l1_loss(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  expect_same_shape(a, b, "l1_loss");
  const bool track = tracked(tape, {&a, &b});
  Tensor<S> out = make_output<S>({1}, track);
  const S* pa = a.data();
  const S* pb = b.data();
  const std::int64_t n = a.numel();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += std::abs(double(pa[i]) - double(pb[i]));
  out.data()[0] = S(acc / double(n));
  if (track) {
    tape->record([a, b, out]() mutable {
      const S g = out.grad()[0] / S(a.numel());
      const S* pa = a.data();
      const S* pb = b.data();
      const std::int64_t n = a.numel();
      if (a.requires_grad()) {
        S* ga = a.grad();
        for (std::int64_t i = 0; i < n; ++i) {
          const S d = pa[i] - pb[i];
          ga[i] += d > S(0) ? g : (d < S(0) ? -g : S(0));
        }
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (std::int64_t i = 0; i < n; ++i) {
          const S d = pa[i] - pb[i];
          gb[i] -= d > S(0) ? g : (d < S(0) ? -g : S(0));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation, replicate border, same-size output)

template <class S>
Tensor<S> conv2d(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& weights,
                 const Tensor<S>& bias) {
  expect_rank(input, 3, "conv2d input");
  expect_rank(weights, 4, "conv2d weights");
  expect_rank(bias, 1, "conv2d bias");
  const int h = input.extent(0), w = input.extent(1), ci = input.extent(2);
  const int kh = weights.extent(0), kw = weights.extent(1);
  const int co = weights.extent(3);
  if (weights.extent(2) != ci)
    throw ShapeError("conv2d: weight input channels " + std::to_string(weights.extent(2)) +
                     " do not match image channels " + std::to_string(ci));
  if (bias.extent(0) != co) throw ShapeError("conv2d: bias size does not match output channels");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  const int oy = kh / 2, ox = kw / 2;

  const bool track = tracked(tape, {&input, &weights, &bias});
  Tensor<S> out = make_output<S>({h, w, co}, track);
  const S* in = input.data();
  const S* wt = weights.data();
  const S* bs = bias.data();
  S* po = out.data();

  std::vector<S> acc(static_cast<std::size_t>(co), S(0));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int o = 0; o < co; ++o) acc[std::size_t(o)] = bs[o];
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = std::clamp(y + ky - oy, 0, h - 1);
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = std::clamp(x + kx - ox, 0, w - 1);
          const S* ip = in + idx3(sy, sx, 0, w, ci);
          const S* wp = wt + (std::int64_t(ky) * kw + kx) * ci * co;
          for (int c = 0; c < ci; ++c) {
            const S v = ip[c];
            const S* wr = wp + std::int64_t(c) * co;
            for (int o = 0; o < co; ++o) acc[std::size_t(o)] += v * wr[o];
          }
        }
      }
      S* op = po + idx3(y, x, 0, w, co);
      for (int o = 0; o < co; ++o) op[o] = acc[std::size_t(o)];
    }
  }

  if (track) {
    tape->record([input, weights, bias, out, h, w, ci, kh, kw, co, oy, ox]() mutable {
      const S* g = out.grad();
      const S* in = input.data();
      const S* wt = weights.data();
      if (weights.requires_grad()) {
        S* gw = weights.grad();
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const S* gr = g + idx3(y, x, 0, w, co);
            for (int ky = 0; ky < kh; ++ky) {
              const int sy = std::clamp(y + ky - oy, 0, h - 1);
              for (int kx = 0; kx < kw; ++kx) {
                const int sx = std::clamp(x + kx - ox, 0, w - 1);
                const S* ip = in + idx3(sy, sx, 0, w, ci);
                S* gwp = gw + (std::int64_t(ky) * kw + kx) * ci * co;
                for (int c = 0; c < ci; ++c) {
                  const S v = ip[c];
                  S* gwr = gwp + std::int64_t(c) * co;
                  for (int o = 0; o < co; ++o) gwr[o] += v * gr[o];
                }
              }
            }
          }
      }
      if (input.requires_grad()) {
        S* gi = input.grad();
        // weights transposed to (ky, kx, co, ci) turn the channel gather into
        // contiguous FMA rows
        std::vector<S> wtr(std::size_t(kh) * kw * co * ci, S(0));
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx)
            for (int c = 0; c < ci; ++c)
              for (int o = 0; o < co; ++o)
                wtr[std::size_t(((ky * kw + kx) * co + o) * ci + c)] =
                    wt[(std::int64_t(ky) * kw + kx) * ci * co + std::int64_t(c) * co + o];
        std::vector<S> acc(std::size_t(ci), S(0));
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const S* gr = g + idx3(y, x, 0, w, co);
            for (int ky = 0; ky < kh; ++ky) {
              const int sy = std::clamp(y + ky - oy, 0, h - 1);
              for (int kx = 0; kx < kw; ++kx) {
                const int sx = std::clamp(x + kx - ox, 0, w - 1);
                const S* wp = wtr.data() + std::size_t((ky * kw + kx) * co) * ci;
                for (int c = 0; c < ci; ++c) acc[std::size_t(c)] = S(0);
                for (int o = 0; o < co; ++o) {
                  const S gv = gr[o];
                  const S* wr = wp + std::size_t(o) * ci;
                  for (int c = 0; c < ci; ++c) acc[std::size_t(c)] += gv * wr[c];
                }
                S* gp = gi + idx3(sy, sx, 0, w, ci);
                for (int c = 0; c < ci; ++c) gp[c] += acc[std::size_t(c)];
              }
            }
          }
      }
      if (bias.requires_grad()) {
        S* gb = bias.grad();
        for (std::int64_t p = 0; p < std::int64_t(h) * w; ++p)
          for (int o = 0; o < co; ++o) gb[o] += g[p * co + o];
      }
    });
  }
  return out;
}

// Valid-region depthwise cross-correlation with one shared 2-D window;
// output is (h-kh+1) x (w-kw+1) x c. Used by the windowed SSIM statistics.
template <class S>
Tensor<S> depthwise_valid(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& window) {
  expect_rank(input, 3, "depthwise_valid input");
  expect_rank(window, 2, "depthwise_valid window");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  const int kh = window.extent(0), kw = window.extent(1);
  if (h < kh || w < kw)
    throw ShapeError("depthwise_valid: image " + shape_str(input.shape()) +
                     " smaller than window");
  const int ho = h - kh + 1, wo = w - kw + 1;
  const bool track = tracked(tape, {&input, &window});
  Tensor<S> out = make_output<S>({ho, wo, c}, track);
  const S* in = input.data();
  const S* k = window.data();
  S* po = out.data();
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      S* op = po + idx3(y, x, 0, wo, c);
      for (int q = 0; q < c; ++q) op[q] = S(0);
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const S kv = k[ky * kw + kx];
          const S* ip = in + idx3(y + ky, x + kx, 0, w, c);
          for (int q = 0; q < c; ++q) op[q] += kv * ip[q];
        }
    }
  if (track) {
    tape->record([input, window, out, ho, wo, c, kh, kw, w]() mutable {
      const S* g = out.grad();
      const S* in = input.data();
      const S* k = window.data();
      const bool need_gi = input.requires_grad();
      const bool need_gk = window.requires_grad();
      S* gi = need_gi ? input.grad() : nullptr;
      S* gk = need_gk ? window.grad() : nullptr;
      for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
          const S* gr = g + idx3(y, x, 0, wo, c);
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const std::int64_t ibase = idx3(y + ky, x + kx, 0, w, c);
              if (need_gi) {
                const S kv = k[ky * kw + kx];
                for (int q = 0; q < c; ++q) gi[ibase + q] += kv * gr[q];
              }
              if (need_gk) {
                S s = 0;
                for (int q = 0; q < c; ++q) s += in[ibase + q] * gr[q];
                gk[ky * kw + kx] += s;
              }
            }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear sampling (pixel-unit coordinates, border clamp)

// coords holds absolute sample positions (y, x) per output pixel.
template <class S>
Tensor<S> grid_sample_bilinear(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& coords) {
  expect_rank(input, 3, "grid_sample input");
  expect_rank(coords, 3, "grid_sample coords");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  if (coords.extent(0) != h || coords.extent(1) != w || coords.extent(2) != 2)
    throw ShapeError("grid_sample: coords must be " + std::to_string(h) + "x" +
                     std::to_string(w) + "x2, got " + shape_str(coords.shape()));
  const bool track = tracked(tape, {&input, &coords});
  Tensor<S> out = make_output<S>({h, w, c}, track);
  const S* in = input.data();
  const S* cr = coords.data();
  S* po = out.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::int64_t p = std::int64_t(y) * w + x;
      const S sy = std::clamp(cr[p * 2 + 0], S(0), S(h - 1));
      const S sx = std::clamp(cr[p * 2 + 1], S(0), S(w - 1));
      const int y0 = std::min(int(std::floor(sy)), h - 1);
      const int x0 = std::min(int(std::floor(sx)), w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const S fy = sy - S(y0);
      const S fx = sx - S(x0);
      const S* p00 = in + idx3(y0, x0, 0, w, c);
      const S* p01 = in + idx3(y0, x1, 0, w, c);
      const S* p10 = in + idx3(y1, x0, 0, w, c);
      const S* p11 = in + idx3(y1, x1, 0, w, c);
      S* op = po + p * c;
      for (int q = 0; q < c; ++q) {
        const S top = p00[q] * (S(1) - fx) + p01[q] * fx;
        const S bot = p10[q] * (S(1) - fx) + p11[q] * fx;
        op[q] = top * (S(1) - fy) + bot * fy;
      }
    }
  if (track) {
    tape->record([input, coords, out, h, w, c]() mutable {
      const S* g = out.grad();
      const S* in = input.data();
      const S* cr = coords.data();
      const bool need_gi = input.requires_grad();
      const bool need_gc = coords.requires_grad();
      S* gi = need_gi ? input.grad() : nullptr;
      S* gc = need_gc ? coords.grad() : nullptr;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::int64_t p = std::int64_t(y) * w + x;
          const S ry = cr[p * 2 + 0];
          const S rx = cr[p * 2 + 1];
          const S sy = std::clamp(ry, S(0), S(h - 1));
          const S sx = std::clamp(rx, S(0), S(w - 1));
          const int y0 = std::min(int(std::floor(sy)), h - 1);
          const int x0 = std::min(int(std::floor(sx)), w - 1);
          const int y1 = std::min(y0 + 1, h - 1);
          const int x1 = std::min(x0 + 1, w - 1);
          const S fy = sy - S(y0);
          const S fx = sx - S(x0);
          const std::int64_t b00 = idx3(y0, x0, 0, w, c), b01 = idx3(y0, x1, 0, w, c);
          const std::int64_t b10 = idx3(y1, x0, 0, w, c), b11 = idx3(y1, x1, 0, w, c);
          const S* gr = g + p * c;
          S dsy = 0, dsx = 0;
          for (int q = 0; q < c; ++q) {
            const S gv = gr[q];
            if (need_gi) {
              gi[b00 + q] += gv * (S(1) - fy) * (S(1) - fx);
              gi[b01 + q] += gv * (S(1) - fy) * fx;
              gi[b10 + q] += gv * fy * (S(1) - fx);
              gi[b11 + q] += gv * fy * fx;
            }
            if (need_gc) {
              const S top = in[b00 + q] * (S(1) - fx) + in[b01 + q] * fx;
              const S bot = in[b10 + q] * (S(1) - fx) + in[b11 + q] * fx;
              dsy += gv * (bot - top);
              const S left = in[b00 + q] * (S(1) - fy) + in[b10 + q] * fy;
              const S right = in[b01 + q] * (S(1) - fy) + in[b11 + q] * fy;
              dsx += gv * (right - left);
            }
          }
          if (need_gc) {
            // clamped coordinates stop the gradient
            if (ry >= S(0) && ry <= S(h - 1)) gc[p * 2 + 0] += dsy;
            if (rx >= S(0) && rx <= S(w - 1)) gc[p * 2 + 1] += dsx;
          }
        }
    });
  }
  return out;
}

// Constant (y, x) index grid for identity sampling.
template <class S>
Tensor<S> identity_coords(int h, int w) {
  Tensor<S> t = Tensor<S>::zeros({h, w, 2});
  S* p = t.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::int64_t q = std::int64_t(y) * w + x;
      p[q * 2 + 0] = S(y);
      p[q * 2 + 1] = S(x);
    }
  return t;
}

// ---------------------------------------------------------------------------
// instance normalization

// Per-channel spatial standardization with learned affine. eps stabilizes the
// variance; x_hat values are kept for backward.
template <class S>
Tensor<S> instance_norm(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& gscale,
                        const Tensor<S>& gshift, S eps = S(1e-5)) {
  expect_rank(input, 3, "instance_norm input");
  expect_rank(gscale, 1, "instance_norm scale");
  expect_rank(gshift, 1, "instance_norm shift");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  if (gscale.extent(0) != c || gshift.extent(0) != c)
    throw ShapeError("instance_norm: affine params do not match channel count");
  const std::int64_t np = std::int64_t(h) * w;
  if (np < 2) throw ShapeError("instance_norm: degenerate input, needs at least 2 pixels");

  const bool track = tracked(tape, {&input, &gscale, &gshift});
  Tensor<S> out = make_output<S>({h, w, c}, track);
  const S* in = input.data();
  const S* sc = gscale.data();
  const S* sh = gshift.data();
  S* po = out.data();

  auto xhat = std::make_shared<std::vector<S>>(std::size_t(np * c));
  auto inv_std = std::make_shared<std::vector<S>>(std::size_t(c));
  for (int q = 0; q < c; ++q) {
    double mu = 0.0;
    for (std::int64_t p = 0; p < np; ++p) mu += double(in[p * c + q]);
    mu /= double(np);
    double var = 0.0;
    for (std::int64_t p = 0; p < np; ++p) {
      const double d = double(in[p * c + q]) - mu;
      var += d * d;
    }
    var /= double(np);
    const S istd = S(1.0 / std::sqrt(var + double(eps)));
    (*inv_std)[std::size_t(q)] = istd;
    const S m = S(mu);
    for (std::int64_t p = 0; p < np; ++p) {
      const S xh = (in[p * c + q] - m) * istd;
      (*xhat)[std::size_t(p * c + q)] = xh;
      po[p * c + q] = sc[q] * xh + sh[q];
    }
  }

  if (track) {
    tape->record([input, gscale, gshift, out, xhat, inv_std, c, np]() mutable {
      const S* g = out.grad();
      const S* sc = gscale.data();
      const bool need_gi = input.requires_grad();
      S* gi = need_gi ? input.grad() : nullptr;
      S* gsc = gscale.requires_grad() ? gscale.grad() : nullptr;
      S* gsh = gshift.requires_grad() ? gshift.grad() : nullptr;
      for (int q = 0; q < c; ++q) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::int64_t p = 0; p < np; ++p) {
          const S gv = g[p * c + q];
          sum_g += double(gv);
          sum_gx += double(gv) * double((*xhat)[std::size_t(p * c + q)]);
        }
        if (gsc) gsc[q] += S(sum_gx);
        if (gsh) gsh[q] += S(sum_g);
        if (need_gi) {
          const S mg = S(sum_g / double(np));
          const S mgx = S(sum_gx / double(np));
          const S k = sc[q] * (*inv_std)[std::size_t(q)];
          for (std::int64_t p = 0; p < np; ++p) {
            const S xh = (*xhat)[std::size_t(p * c + q)];
            gi[p * c + q] += k * (g[p * c + q] - mg - xh * mgx);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// resampling helpers for the encoder/decoder trunks

template <class S>
Tensor<S> avgpool2(Tape<S>* tape, const Tensor<S>& input) {
  expect_rank(input, 3, "avgpool2");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  if (h % 2 || w % 2) throw ShapeError("avgpool2: extents must be even, got " + shape_str(input.shape()));
  const int ho = h / 2, wo = w / 2;
  const bool track = tracked(tape, {&input});
  Tensor<S> out = make_output<S>({ho, wo, c}, track);
  const S* in = input.data();
  S* po = out.data();
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      const S* p00 = in + idx3(2 * y, 2 * x, 0, w, c);
      const S* p01 = in + idx3(2 * y, 2 * x + 1, 0, w, c);
      const S* p10 = in + idx3(2 * y + 1, 2 * x, 0, w, c);
      const S* p11 = in + idx3(2 * y + 1, 2 * x + 1, 0, w, c);
      S* op = po + idx3(y, x, 0, wo, c);
      for (int q = 0; q < c; ++q) op[q] = S(0.25) * (p00[q] + p01[q] + p10[q] + p11[q]);
    }
  if (track) {
    tape->record([input, out, ho, wo, c, w]() mutable {
      const S* g = out.grad();
      S* gi = input.grad();
      for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
          const S* gr = g + idx3(y, x, 0, wo, c);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              S* gp = gi + idx3(2 * y + dy, 2 * x + dx, 0, w, c);
              for (int q = 0; q < c; ++q) gp[q] += S(0.25) * gr[q];
            }
        }
    });
  }
  return out;
}

template <class S>
Tensor<S> upsample_nearest2(Tape<S>* tape, const Tensor<S>& input) {
  expect_rank(input, 3, "upsample_nearest2");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  const int ho = h * 2, wo = w * 2;
  const bool track = tracked(tape, {&input});
  Tensor<S> out = make_output<S>({ho, wo, c}, track);
  const S* in = input.data();
  S* po = out.data();
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      const S* ip = in + idx3(y / 2, x / 2, 0, w, c);
      S* op = po + idx3(y, x, 0, wo, c);
      for (int q = 0; q < c; ++q) op[q] = ip[q];
    }
  if (track) {
    tape->record([input, out, h, w, c, wo]() mutable {
      const S* g = out.grad();
      S* gi = input.grad();
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          S* gp = gi + idx3(y, x, 0, w, c);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const S* gr = g + idx3(2 * y + dy, 2 * x + dx, 0, wo, c);
              for (int q = 0; q < c; ++q) gp[q] += gr[q];
            }
        }
    });
  }
  return out;
}

// Separable bilinear upsampling by integer factors, half-pixel centers,
// border clamp. Linear in the input.
template <class S>
Tensor<S> upsample_bilinear(Tape<S>* tape, const Tensor<S>& input, int fy, int fx) {
  expect_rank(input, 3, "upsample_bilinear");
  if (fy < 1 || fx < 1) throw ShapeError("upsample_bilinear: factors must be >= 1");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  const int ho = h * fy, wo = w * fx;
  const bool track = tracked(tape, {&input});
  Tensor<S> out = make_output<S>({ho, wo, c}, track);

  auto src_of = [](int o, int f, int n) {
    double s = (double(o) + 0.5) / double(f) - 0.5;
    if (s < 0) s = 0;
    if (s > double(n - 1)) s = double(n - 1);
    int i0 = int(s);
    if (i0 > n - 2) i0 = n - 2 >= 0 ? n - 2 : 0;
    double t = s - double(i0);
    return std::pair<int, double>(i0, t);
  };

  const S* in = input.data();
  S* po = out.data();
  for (int y = 0; y < ho; ++y) {
    auto [y0, ty] = src_of(y, fy, h);
    const int y1 = std::min(y0 + 1, h - 1);
    for (int x = 0; x < wo; ++x) {
      auto [x0, tx] = src_of(x, fx, w);
      const int x1 = std::min(x0 + 1, w - 1);
      const S* p00 = in + idx3(y0, x0, 0, w, c);
      const S* p01 = in + idx3(y0, x1, 0, w, c);
      const S* p10 = in + idx3(y1, x0, 0, w, c);
      const S* p11 = in + idx3(y1, x1, 0, w, c);
      S* op = po + idx3(y, x, 0, wo, c);
      for (int q = 0; q < c; ++q) {
        const S top = S((1.0 - tx) * double(p00[q]) + tx * double(p01[q]));
        const S bot = S((1.0 - tx) * double(p10[q]) + tx * double(p11[q]));
        op[q] = S((1.0 - ty) * double(top) + ty * double(bot));
      }
    }
  }
  if (track) {
    tape->record([input, out, h, w, c, ho, wo, fy, fx, src_of]() mutable {
      const S* g = out.grad();
      S* gi = input.grad();
      for (int y = 0; y < ho; ++y) {
        auto [y0, ty] = src_of(y, fy, h);
        const int y1 = std::min(y0 + 1, h - 1);
        for (int x = 0; x < wo; ++x) {
          auto [x0, tx] = src_of(x, fx, w);
          const int x1 = std::min(x0 + 1, w - 1);
          const S* gr = g + idx3(y, x, 0, wo, c);
          for (int q = 0; q < c; ++q) {
            const S gv = gr[q];
            gi[idx3(y0, x0, q, w, c)] += gv * S((1 - ty) * (1 - tx));
            gi[idx3(y0, x1, q, w, c)] += gv * S((1 - ty) * tx);
            gi[idx3(y1, x0, q, w, c)] += gv * S(ty * (1 - tx));
            gi[idx3(y1, x1, q, w, c)] += gv * S(ty * tx);
          }
        }
      }
    });
  }
  return out;
}

// Catmull-Rom bicubic upsampling by integer factors (a = -0.5), half-pixel
// centers, border clamp. Linear in the input, so backward is a scatter of the
// same weights.
template <class S>
Tensor<S> upsample_bicubic(Tape<S>* tape, const Tensor<S>& input, int fy, int fx) {
  expect_rank(input, 3, "upsample_bicubic");
  if (fy < 1 || fx < 1) throw ShapeError("upsample_bicubic: factors must be >= 1");
  const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
  const int ho = h * fy, wo = w * fx;
  const bool track = tracked(tape, {&input});
  Tensor<S> out = make_output<S>({ho, wo, c}, track);

  auto cubic = [](double t) {
    // Catmull-Rom weights for the four taps around fractional position t
    const double t2 = t * t, t3 = t2 * t;
    return std::array<double, 4>{
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    };
  };
  auto prep = [cubic](int o, int f, int n, std::array<int, 4>& ix, std::array<double, 4>& wt) {
    double s = (double(o) + 0.5) / double(f) - 0.5;
    double fl = std::floor(s);
    const double t = s - fl;
    const int i = int(fl);
    wt = cubic(t);
    for (int k = 0; k < 4; ++k) ix[std::size_t(k)] = std::clamp(i - 1 + k, 0, n - 1);
  };

  const S* in = input.data();
  S* po = out.data();
  for (int y = 0; y < ho; ++y) {
    std::array<int, 4> ys;
    std::array<double, 4> wy;
    prep(y, fy, h, ys, wy);
    for (int x = 0; x < wo; ++x) {
      std::array<int, 4> xs;
      std::array<double, 4> wx;
      prep(x, fx, w, xs, wx);
      S* op = po + idx3(y, x, 0, wo, c);
      for (int q = 0; q < c; ++q) {
        double acc = 0.0;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b)
            acc += wy[std::size_t(a)] * wx[std::size_t(b)] *
                   double(in[idx3(ys[std::size_t(a)], xs[std::size_t(b)], q, w, c)]);
        op[q] = S(acc);
      }
    }
  }
  if (track) {
    tape->record([input, out, h, w, c, ho, wo, fy, fx, prep]() mutable {
      const S* g = out.grad();
      S* gi = input.grad();
      for (int y = 0; y < ho; ++y) {
        std::array<int, 4> ys;
        std::array<double, 4> wy;
        prep(y, fy, h, ys, wy);
        for (int x = 0; x < wo; ++x) {
          std::array<int, 4> xs;
          std::array<double, 4> wx;
          prep(x, fx, w, xs, wx);
          const S* gr = g + idx3(y, x, 0, wo, c);
          for (int q = 0; q < c; ++q) {
            const double gv = double(gr[q]);
            for (int a = 0; a < 4; ++a)
              for (int b = 0; b < 4; ++b)
                gi[idx3(ys[std::size_t(a)], xs[std::size_t(b)], q, w, c)] +=
                    S(gv * wy[std::size_t(a)] * wx[std::size_t(b)]);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace pidm
