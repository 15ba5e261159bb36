#pragma once

// Self-supervised training: spatially degrade the HR-MSI, spectrally degrade
// the LR-HSI, and press the two degraded cubes together with an SSIM loss.
// Full-image batches, Adam, deterministic given the seed.

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "pidm/adam.hpp"
#include "pidm/model.hpp"
#include "pidm/ssim.hpp"

namespace pidm {

struct TrainConfig {
  int epochs = 2000;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  int kernel_size = 25;
  double trunc_eps = 3.0;
  int enc_dim = 32;
  bool full_image = true;  // no patch cutting
  bool enable_pd = true;
  bool enable_ad = true;
  bool enable_sm = true;
  bool enable_sw = true;
};

struct TrainReport {
  std::vector<double> losses;  // one per epoch
  double final_ssim = 0.0;
  double final_rmse = 0.0;
  double seconds = 0.0;
  TrainConfig config;
};

// Min-max normalization to [0, 1] per cube; constant cubes map to zero.
template <class S>
Tensor<S> normalize01(const Tensor<S>& t) {
  S lo = t.data()[0], hi = t.data()[0];
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    lo = std::min(lo, t.data()[i]);
    hi = std::max(hi, t.data()[i]);
  }
  Tensor<S> out = Tensor<S>::zeros(t.shape());
  if (hi > lo) {
    const S inv = S(1) / (hi - lo);
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = (t.data()[i] - lo) * inv;
  }
  return out;
}

template <class S>
double rmse(const Tensor<S>& a, const Tensor<S>& b) {
  expect_same_shape(a, b, "rmse");
  double acc = 0.0;
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = double(a.data()[i]) - double(b.data()[i]);
    acc += d * d;
  }
  return std::sqrt(acc / double(n));
}

// L(theta) = 1 - SSIM(SpaDN(Z), SpeDN(Y))
template <class S>
Tensor<S> self_supervised_loss(Tape<S>* tape, const PidmModel<S>& model, const Tensor<S>& hsi,
                               const Tensor<S>& msi) {
  Tensor<S> zt = model.spatial_forward(tape, msi);
  Tensor<S> yt = model.spectral_forward(tape, hsi);
  expect_same_shape(zt, yt, "self_supervised_loss degraded pair");
  Tensor<S> s = ssim(tape, zt, yt);
  Tensor<S> one = Tensor<S>::full({1}, S(1));
  return sub(tape, one, s);
}

template <class S>
void validate_pair(const Tensor<S>& hsi, const Tensor<S>& msi, int* sy = nullptr,
                   int* sx = nullptr) {
  expect_rank(hsi, 3, "LR-HSI");
  expect_rank(msi, 3, "HR-MSI");
  const int h = hsi.extent(0), w = hsi.extent(1);
  const int H = msi.extent(0), W = msi.extent(1);
  if (H % h || W % w)
    throw ShapeError("HR-MSI extents " + shape_str(msi.shape()) +
                     " are not an integer multiple of LR-HSI extents " + shape_str(hsi.shape()));
  if (hsi.extent(2) < msi.extent(2))
    throw ShapeError("LR-HSI has fewer bands than HR-MSI");
  if (sy) *sy = H / h;
  if (sx) *sx = W / w;
}

template <class S>
std::pair<PidmModel<S>, TrainReport> train(const Tensor<S>& hsi, const Tensor<S>& msi,
                                           const TrainConfig& cfg) {
  int sy = 0, sx = 0;
  validate_pair(hsi, msi, &sy, &sx);

  PidmConfig mc;
  mc.bands_hsi = hsi.extent(2);
  mc.bands_msi = msi.extent(2);
  mc.scale_y = sy;
  mc.scale_x = sx;
  mc.kernel_size = cfg.kernel_size;
  mc.trunc_eps = cfg.trunc_eps;
  mc.enc_dim = cfg.enc_dim;
  mc.seed = cfg.seed;
  mc.enable_pd = cfg.enable_pd;
  mc.enable_ad = cfg.enable_ad;
  mc.enable_sm = cfg.enable_sm;
  mc.enable_sw = cfg.enable_sw;
  PidmModel<S> model = PidmModel<S>::init(mc);

  Tensor<S> y = normalize01(hsi);
  Tensor<S> z = normalize01(msi);

  TrainReport report;
  report.config = cfg;
  report.losses.reserve(std::size_t(cfg.epochs));

  const auto t0 = std::chrono::steady_clock::now();
  Adam<S> opt(model.params(), cfg.lr);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape<S> tape;
    Tensor<S> loss = self_supervised_loss(&tape, model, y, z);
    const double lv = double(loss.item());
    if (!std::isfinite(lv))
      throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    report.losses.push_back(lv);
    tape.backward(loss);
    opt.step();
    model.project();
  }

  {
    Tensor<S> zt = model.spatial_forward(nullptr, z);
    Tensor<S> yt = model.spectral_forward(nullptr, y);
    report.final_ssim = double(ssim<S>(nullptr, zt, yt).item());
    report.final_rmse = rmse(zt, yt);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {model, report};
}

}  // namespace pidm
