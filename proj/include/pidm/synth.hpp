#pragma once

// Synthetic scene generation. A scene is a piecewise-smooth HR-HSI built from
// smooth per-material spectra over Voronoi-style regions, plus a hidden
// ground-truth degradation model with a shifted anisotropic kernel, a smooth
// nonzero warp field, spatial-spectral modulation, and band-mixing blocks.
// Y and Z are exact forwards of the ground-truth model, so they regenerate
// bit-identically from (seed, model).

#include <cmath>
#include <vector>

#include "pidm/model.hpp"
#include "pidm/rng.hpp"

namespace pidm {

struct SynthOptions {
  int materials = 6;
  double noise = 0.004;      // amplitude of the i.i.d. texture noise on X
  double region_blur = 4.0;  // spread of the abundance smoothing kernel
  double warp_gain = 0.9;    // target rms of the ground-truth warp field, px
  double mod_gain = 0.05;    // target rms of the spectral modulation residual
  double block_nl = 0.25;    // relative share of the nonlinear block features
  double alpha_range = 2.2;  // kernel offset draw, +/- px
  bool anisotropic = true;   // force distinct spreads
};

template <class S>
struct SyntheticScene {
  Tensor<S> X;  // H x W x C
  Tensor<S> Y;  // (H/s) x (W/s) x C, = gt.spatial_forward(X)
  Tensor<S> Z;  // H x W x c,       = gt.spectral_forward(X)
  PidmModel<S> gt;
  std::uint64_t seed = 0;
};

namespace detail {

// Smooth spectrum over the band axis: a few random sinusoids squashed into
// (0.05, 0.95).
inline std::vector<double> material_spectrum(Rng& rng, int bands) {
  std::vector<double> s(std::size_t(bands), 0.0);
  const double base = rng.uniform(0.25, 0.75);
  double a[3], f[3], p[3];
  for (int m = 0; m < 3; ++m) {
    a[m] = rng.uniform(0.06, 0.22);
    f[m] = rng.uniform(0.5, 3.0);
    p[m] = rng.uniform(0.0, 6.283185307179586);
  }
  for (int b = 0; b < bands; ++b) {
    double v = base;
    for (int m = 0; m < 3; ++m)
      v += a[m] * std::sin(6.283185307179586 * f[m] * b / double(bands) + p[m]);
    s[std::size_t(b)] = std::min(0.95, std::max(0.05, v));
  }
  return s;
}

}  // namespace detail

// Piecewise-smooth abundance maps: Voronoi labels from random sites, one-hot,
// Gaussian-smoothed, renormalized to sum one per pixel.
template <class S>
std::vector<Tensor<S>> abundance_maps(Rng& rng, int H, int W, int K, double region_blur) {
  std::vector<double> sy(std::size_t(K), 0.0), sx(std::size_t(K), 0.0);
  for (int k = 0; k < K; ++k) {
    sy[std::size_t(k)] = rng.uniform(0, H - 1);
    sx[std::size_t(k)] = rng.uniform(0, W - 1);
  }
  std::vector<Tensor<S>> maps;
  for (int k = 0; k < K; ++k) maps.push_back(Tensor<S>::zeros({H, W, 1}));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      double bd = 1e30;
      for (int k = 0; k < K; ++k) {
        const double dy = y - sy[std::size_t(k)], dx = x - sx[std::size_t(k)];
        const double d = dy * dy + dx * dx;
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      maps[std::size_t(best)].data()[y * W + x] = S(1);
    }
  auto kp = KernelParams<S>::make(0, 0, S(region_blur), S(region_blur), 0, 13);
  Tensor<S> blur = generate_kernel<S>(nullptr, kp);
  for (auto& m : maps) m = blur_and_decimate<S>(nullptr, m, blur, {1, 1, 0});
  for (int p = 0; p < H * W; ++p) {
    S sum = 0;
    for (auto& m : maps) sum += m.data()[p];
    for (auto& m : maps) m.data()[p] /= sum;
  }
  return maps;
}

template <class S>
SyntheticScene<S> make_synthetic(std::uint64_t seed, int H, int W, int C, int c, int s,
                                 const SynthOptions& opt = {}) {
  if (H % s || W % s)
    throw ShapeError("make_synthetic: extents " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by scale " + std::to_string(s));
  if (c > C) throw ShapeError("make_synthetic: MSI bands exceed HSI bands");
  Rng rng(seed * 0x9e3779b9u + 17);

  // ---- HR-HSI -------------------------------------------------------------
  const int K = std::max(1, opt.materials);
  std::vector<std::vector<double>> spectra;
  for (int k = 0; k < K; ++k) spectra.push_back(detail::material_spectrum(rng, C));
  Tensor<S> X = Tensor<S>::zeros({H, W, C});
  if (K == 1) {
    for (int p = 0; p < H * W; ++p)
      for (int b = 0; b < C; ++b) X.data()[p * C + b] = S(spectra[0][std::size_t(b)]);
  } else {
    auto maps = abundance_maps<S>(rng, H, W, K, opt.region_blur);
    for (int p = 0; p < H * W; ++p)
      for (int b = 0; b < C; ++b) {
        double v = 0;
        for (int k = 0; k < K; ++k)
          v += double(maps[std::size_t(k)].data()[p]) * spectra[std::size_t(k)][std::size_t(b)];
        X.data()[p * C + b] = S(v);
      }
  }
  if (opt.noise > 0) {
    for (std::int64_t i = 0; i < X.numel(); ++i) {
      double v = double(X.data()[i]) + opt.noise * rng.normal();
      X.data()[i] = S(std::min(1.0, std::max(0.0, v)));
    }
  }

  // ---- ground-truth model --------------------------------------------------
  PidmConfig cfg;
  cfg.bands_hsi = C;
  cfg.bands_msi = c;
  cfg.scale_y = cfg.scale_x = s;
  cfg.seed = seed * 7919 + 3;
  PidmModel<S> gt = PidmModel<S>::init(cfg);

  // kernel: shifted, anisotropic, rotated
  {
    S* p = gt.kparams.p.data();
    p[0] = S(rng.uniform(-opt.alpha_range, opt.alpha_range));
    p[1] = S(rng.uniform(-opt.alpha_range, opt.alpha_range));
    double dy = rng.uniform(1.2, 2.2), dx = rng.uniform(2.8, 4.4);
    if (!opt.anisotropic) dx = dy;
    if (rng.uniform() < 0.5) std::swap(dy, dx);
    p[2] = S(dy);
    p[3] = S(dx);
    p[4] = S(rng.uniform(0.0, 3.141592653589793));
  }

  // warp: random projection rescaled so the raw field hits the target rms
  if (opt.warp_gain > 0) {
    for (std::int64_t i = 0; i < gt.wgen.proj.w.numel(); ++i)
      gt.wgen.proj.w.data()[i] = S(rng.uniform(-1, 1));
    Tensor<S> mean = channel_mean<S>(nullptr, X);
    Tensor<S> raw = gt.wgen.forward(nullptr, mean);
    double ms = 0;
    for (std::int64_t i = 0; i < raw.numel(); ++i) ms += double(raw.data()[i]) * raw.data()[i];
    ms = std::sqrt(ms / double(raw.numel()));
    const double k = ms > 1e-12 ? opt.warp_gain / ms : 0.0;
    for (std::int64_t i = 0; i < gt.wgen.proj.w.numel(); ++i)
      gt.wgen.proj.w.data()[i] = S(double(gt.wgen.proj.w.data()[i]) * k);
  }

  // band blocks: each output band is a smooth non-negative mixing bump plus a
  // controlled nonlinear residual; instance-norm affine is calibrated on X so
  // the linear path rides the far-linear region of GELU
  {
    for (int n = 0; n < c; ++n) {
      BandBlock<S>& blk = gt.blocks[std::size_t(n)];
      const double mu_n = (n + 0.5) * C / double(c);
      const double width = std::max(1.0, C / (1.8 * c));
      std::vector<double> mix(std::size_t(C), 0.0);
      double msum = 0;
      for (int b = 0; b < C; ++b) {
        mix[std::size_t(b)] = std::exp(-0.5 * (b - mu_n) * (b - mu_n) / (width * width));
        msum += mix[std::size_t(b)];
      }
      for (auto& v : mix) v /= msum;  // row-stochastic mixing

      const int FW = blk.c1.w.extent(3);  // feature width
      for (std::int64_t i = 0; i < blk.c1.w.numel(); ++i) blk.c1.w.data()[i] = S(0);
      for (int b = 0; b < C; ++b) blk.c1.w.data()[b * FW + 0] = S(mix[std::size_t(b)]);
      // a few random spectral probes for the nonlinear share
      for (int m = 1; m < FW; ++m)
        for (int b = 0; b < C; ++b) blk.c1.w.data()[b * FW + m] = S(rng.uniform(-1.0, 1.0) / C);
      for (int m = 0; m < FW; ++m) blk.c1.b.data()[m] = S(0);

      // calibrate channel 0 stats on X
      double mu = 0, var = 0;
      std::vector<double> lin(std::size_t(H) * W);
      for (int p = 0; p < H * W; ++p) {
        double a = 0;
        for (int b = 0; b < C; ++b) a += double(X.data()[p * C + b]) * mix[std::size_t(b)];
        lin[std::size_t(p)] = a;
        mu += a;
      }
      mu /= double(H) * W;
      for (int p = 0; p < H * W; ++p) {
        const double d = lin[std::size_t(p)] - mu;
        var += d * d;
      }
      var /= double(H) * W;
      const double sd = std::sqrt(var + 1e-5);

      blk.n1.scale.data()[0] = S(sd);
      blk.n1.shift.data()[0] = S(mu + 8.0);
      for (int m = 1; m < FW; ++m) {
        blk.n1.scale.data()[m] = S(rng.uniform(0.3, 0.8));
        blk.n1.shift.data()[m] = S(rng.uniform(-0.4, 0.4));  // GELU-curved region
      }
      blk.c2.w.data()[0] = S(1);
      double bias = -8.0;
      for (int m = 1; m < FW; ++m) {
        const double wm = opt.block_nl * rng.uniform(-0.12, 0.12);
        blk.c2.w.data()[m] = S(wm);
      }
      blk.c2.b.data()[0] = S(bias);
    }
  }

  // modulation: small random final layer rescaled to the target residual rms
  if (opt.mod_gain > 0) {
    for (std::int64_t i = 0; i < gt.smn.c3.w.numel(); ++i)
      gt.smn.c3.w.data()[i] = S(rng.uniform(-0.05, 0.05));
    Tensor<S> grid = make_grid<S>(H, W);
    Tensor<S> enc = gt.egen.forward(nullptr, grid);
    Tensor<S> mod = gt.smn.forward(nullptr, X, enc);
    double ms = 0;
    for (std::int64_t i = 0; i < X.numel(); ++i) {
      const double d = double(mod.data()[i]) - double(X.data()[i]);
      ms += d * d;
    }
    ms = std::sqrt(ms / double(X.numel()));
    const double k = ms > 1e-12 ? opt.mod_gain / ms : 0.0;
    for (std::int64_t i = 0; i < gt.smn.c3.w.numel(); ++i)
      gt.smn.c3.w.data()[i] = S(double(gt.smn.c3.w.data()[i]) * k);
  }

  SyntheticScene<S> scene;
  scene.X = X;
  scene.gt = gt;
  scene.seed = seed;
  scene.Y = gt.spatial_forward(nullptr, X);
  scene.Z = gt.spectral_forward(nullptr, X);
  return scene;
}

}  // namespace pidm
