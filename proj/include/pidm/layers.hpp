#pragma once

// Small trainable layer bundles shared by the degradation and fusion
// networks. Weight init is uniform in +/- sqrt(1/fan_in) from the caller's
// seeded generator; zero_init layers start as the identity contribution.

#include <vector>

#include "pidm/ops.hpp"
#include "pidm/rng.hpp"
#include "pidm/tensor.hpp"

namespace pidm {

template <class S>
struct ConvLayer {
  Tensor<S> w;  // kh x kw x cin x cout
  Tensor<S> b;  // cout

  static ConvLayer make(int kh, int kw, int cin, int cout, Rng& rng, bool zero_init = false) {
    ConvLayer l;
    l.w = Tensor<S>::zeros({kh, kw, cin, cout}, true);
    l.b = Tensor<S>::zeros({cout}, true);
    if (!zero_init) {
      const double bound = std::sqrt(1.0 / (double(kh) * kw * cin));
      S* p = l.w.data();
      const std::int64_t n = l.w.numel();
      for (std::int64_t i = 0; i < n; ++i) p[i] = S(rng.uniform(-bound, bound));
    }
    return l;
  }

  Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x) const { return conv2d(tape, x, w, b); }

  void collect(std::vector<Tensor<S>>& out) const {
    out.push_back(w);
    out.push_back(b);
  }
};

template <class S>
struct InstanceNormLayer {
  Tensor<S> scale;
  Tensor<S> shift;

  static InstanceNormLayer make(int c) {
    InstanceNormLayer l;
    l.scale = Tensor<S>::full({c}, S(1), true);
    l.shift = Tensor<S>::zeros({c}, true);
    return l;
  }

  Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x) const {
    return instance_norm(tape, x, scale, shift);
  }

  void collect(std::vector<Tensor<S>>& out) const {
    out.push_back(scale);
    out.push_back(shift);
  }
};

}  // namespace pidm
