#pragma once

// Adam with bias correction. Update arithmetic runs in double regardless of
// the storage scalar so float and double builds share one code path.

#include <cmath>
#include <string>
#include <vector>

#include "pidm/tensor.hpp"

namespace pidm {

template <class S>
class Adam {
 public:
  Adam(std::vector<Tensor<S>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      if (!p.requires_grad()) throw UsageError("Adam: parameter without gradient accumulator");
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  long long step_count() const { return t_; }
  double lr() const { return lr_; }

  // One update over all parameters; gradient accumulators are cleared after.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<S>& p = params_[k];
      S* val = p.data();
      const S* g = p.grad();
      double* m = m_[k].data();
      double* v = v_[k].data();
      const std::int64_t n = p.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        const double gi = double(g[i]);
        if (!std::isfinite(gi))
          throw NumericError("Adam: non-finite gradient in parameter " + std::to_string(k) +
                             " at element " + std::to_string(i) + " on step " +
                             std::to_string(t_));
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] = S(double(val[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
    zero_grad();
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<S>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

}  // namespace pidm
