#pragma once

// Central finite-difference gradient oracle. Independent of the tape: it
// re-runs the forward function with perturbed inputs and compares the
// quotient against the recorded gradient.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pidm/rng.hpp"
#include "pidm/tensor.hpp"

namespace pidm::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
  std::string worst;
};

// fn must build a fresh graph on the given tape and return a scalar loss.
// Checks d(loss)/d(inputs[k][i]) for every listed tensor. When sample_stride
// is > 1 only every sample_stride-th coordinate is probed. Differences below
// atol count as matching: they are roundoff noise of the central quotient,
// not signal (true-zero gradients otherwise divide noise by the floor).
inline GradCheckResult gradcheck(
    const std::function<pidm::Tensor<double>(pidm::Tape<double>*)>& fn,
    const std::vector<pidm::Tensor<double>>& inputs, double h = 1e-6,
    int sample_stride = 1, double atol = 1e-7) {
  GradCheckResult res;

  for (const auto& t : inputs) t.zero_grad();
  pidm::Tape<double> tape;
  pidm::Tensor<double> loss = fn(&tape);
  tape.backward(loss);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    pidm::Tensor<double> t = inputs[k];
    for (std::int64_t i = 0; i < t.numel(); i += sample_stride) {
      const double keep = t.data()[i];
      const double step = h * std::max(1.0, std::abs(keep));
      t.data()[i] = keep + step;
      const double fp = fn(nullptr).item();
      t.data()[i] = keep - step;
      const double fm = fn(nullptr).item();
      t.data()[i] = keep;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = t.grad()[i];
      ++res.checked;
      if (std::abs(fd - an) < atol) continue;
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      const double rel = std::abs(fd - an) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "tensor " + std::to_string(k) + " elem " + std::to_string(i) + ": fd=" +
                    std::to_string(fd) + " ad=" + std::to_string(an);
      }
    }
  }
  return res;
}

// Random fill helpers for oracle fixtures.
inline void fill_uniform(pidm::Tensor<double>& t, pidm::Rng& rng, double lo, double hi) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
}

}  // namespace pidm::testing
