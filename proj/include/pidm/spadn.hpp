#pragma once

// Spatial degradation network: warp step followed by blur + decimation.
//
// The warping field generator consumes the channel mean of its input, so the
// same network serves the 3-band HR-MSI during training and the full cube
// when the model is applied to an HR-HSI. The UNet trunk runs at half
// resolution and the 2-channel field is upsampled bilinearly before
// truncation; warp fields are smooth so nothing is lost, and the full-image
// training budget stays small.

#include <vector>

#include "pidm/kernels.hpp"
#include "pidm/layers.hpp"
#include "pidm/ops.hpp"

namespace pidm {

template <class S>
struct WarpGenConfig {
  int width1 = 16;
  int width2 = 32;
  S trunc_eps = S(3);
};

// UNet-style field generator, two levels, ReLU activations, skip
// connections, zero-initialized final 1x1 projection to 2 channels.
template <class S>
struct WarpGen {
  ConvLayer<S> enc1, enc2, bott, dec2, dec1, proj;
  S trunc_eps = S(3);

  static WarpGen make(Rng& rng, const WarpGenConfig<S>& cfg = {}) {
    WarpGen g;
    g.enc1 = ConvLayer<S>::make(3, 3, 1, cfg.width1, rng);
    g.enc2 = ConvLayer<S>::make(3, 3, cfg.width1, cfg.width2, rng);
    g.bott = ConvLayer<S>::make(3, 3, cfg.width2, cfg.width2, rng);
    g.dec2 = ConvLayer<S>::make(3, 3, cfg.width2 * 2, cfg.width1, rng);
    g.dec1 = ConvLayer<S>::make(3, 3, cfg.width1 * 2, cfg.width1, rng);
    g.proj = ConvLayer<S>::make(1, 1, cfg.width1, 2, rng, /*zero_init=*/true);
    g.trunc_eps = cfg.trunc_eps;
    return g;
  }

  // mean image [H, W, 1] -> raw field [H, W, 2] (pre-truncation)
  Tensor<S> forward(Tape<S>* tape, const Tensor<S>& mean_img) const {
    const int H = mean_img.extent(0), W = mean_img.extent(1);
    if (H % 8 || W % 8 || H < 8 || W < 8)
      throw ShapeError("warp generator needs extents divisible by 8 and >= 8, got " +
                       shape_str(mean_img.shape()));
    Tensor<S> x = avgpool2(tape, mean_img);
    Tensor<S> e1 = relu(tape, enc1.forward(tape, x));
    Tensor<S> e2 = relu(tape, enc2.forward(tape, avgpool2(tape, e1)));
    Tensor<S> b = relu(tape, bott.forward(tape, avgpool2(tape, e2)));
    Tensor<S> d2 = relu(tape, dec2.forward(tape, concat_channels(tape, upsample_nearest2(tape, b), e2)));
    Tensor<S> d1 = relu(tape, dec1.forward(tape, concat_channels(tape, upsample_nearest2(tape, d2), e1)));
    Tensor<S> f = proj.forward(tape, d1);
    return upsample_bilinear(tape, f, 2, 2);
  }

  void collect(std::vector<Tensor<S>>& out) const {
    enc1.collect(out);
    enc2.collect(out);
    bott.collect(out);
    dec2.collect(out);
    dec1.collect(out);
    proj.collect(out);
  }
};

// Omega = tau_eps(f_wgen(channel_mean(img)))
template <class S>
Tensor<S> generate_warp_field(Tape<S>* tape, const WarpGen<S>& gen, const Tensor<S>& img) {
  expect_rank(img, 3, "generate_warp_field");
  Tensor<S> m = channel_mean(tape, img);
  Tensor<S> raw = gen.forward(tape, m);
  return truncate(tape, raw, gen.trunc_eps);
}

// Output pixel (y, x) samples the input at (y + dy, x + dx).
template <class S>
Tensor<S> apply_warp(Tape<S>* tape, const Tensor<S>& img, const Tensor<S>& field) {
  expect_rank(img, 3, "apply_warp image");
  expect_rank(field, 3, "apply_warp field");
  const int H = img.extent(0), W = img.extent(1);
  if (field.extent(0) != H || field.extent(1) != W || field.extent(2) != 2)
    throw ShapeError("apply_warp: field must be " + std::to_string(H) + "x" +
                     std::to_string(W) + "x2");
  Tensor<S> coords = add(tape, identity_coords<S>(H, W), field);
  return grid_sample_bilinear(tape, img, coords);
}

}  // namespace pidm
