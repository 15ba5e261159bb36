#pragma once

// Spectral degradation network: positional modulation followed by parallel
// band-focused projection blocks.

#include <vector>

#include "pidm/layers.hpp"
#include "pidm/ops.hpp"

namespace pidm {

// Normalized coordinate grid, entries (p_i, q_j) in [-1, 1]:
//   p_i = -1 + 2(i - 1)/(h - 1), q_j = -1 + 2(j - 1)/(w - 1)
template <class S>
Tensor<S> make_grid(int h, int w) {
  if (h < 2 || w < 2)
    throw ShapeError("make_grid: extents must be >= 2, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  Tensor<S> g = Tensor<S>::zeros({h, w, 2});
  S* p = g.data();
  for (int i = 0; i < h; ++i) {
    const S pi = S(-1) + S(2) * S(i) / S(h - 1);
    for (int j = 0; j < w; ++j) {
      const S qj = S(-1) + S(2) * S(j) / S(w - 1);
      const std::int64_t q = (std::int64_t(i) * w + j) * 2;
      p[q + 0] = pi;
      p[q + 1] = qj;
    }
  }
  return g;
}

// f_egen: two 1x1 convolutions 2 -> 32 -> D with GELU between. Purely
// pointwise in (p, q), so the encoding adapts to any grid size.
template <class S>
struct EncodingGen {
  ConvLayer<S> c1, c2;

  static EncodingGen make(int enc_dim, Rng& rng) {
    EncodingGen e;
    e.c1 = ConvLayer<S>::make(1, 1, 2, 32, rng);
    e.c2 = ConvLayer<S>::make(1, 1, 32, enc_dim, rng);
    return e;
  }

  Tensor<S> forward(Tape<S>* tape, const Tensor<S>& grid) const {
    return c2.forward(tape, gelu(tape, c1.forward(tape, grid)));
  }

  void collect(std::vector<Tensor<S>>& out) const {
    c1.collect(out);
    c2.collect(out);
  }
};

// f_smn: three 3x3 convolutions (C+D) -> 64 -> 64 -> C with instance norm +
// GELU after the first two, residual connection onto the input bands,
// zero-initialized final layer (the modulation starts as the identity).
template <class S>
struct Modulator {
  ConvLayer<S> c1, c2, c3;
  InstanceNormLayer<S> n1, n2;

  static Modulator make(int bands, int enc_dim, Rng& rng, int width = 64) {
    Modulator m;
    m.c1 = ConvLayer<S>::make(3, 3, bands + enc_dim, width, rng);
    m.n1 = InstanceNormLayer<S>::make(width);
    m.c2 = ConvLayer<S>::make(3, 3, width, width, rng);
    m.n2 = InstanceNormLayer<S>::make(width);
    m.c3 = ConvLayer<S>::make(3, 3, width, bands, rng, /*zero_init=*/true);
    return m;
  }

  Tensor<S> forward(Tape<S>* tape, const Tensor<S>& hsi, const Tensor<S>& enc) const {
    if (hsi.extent(0) != enc.extent(0) || hsi.extent(1) != enc.extent(1))
      throw ShapeError("modulate: encoding extents " + shape_str(enc.shape()) +
                       " do not match image " + shape_str(hsi.shape()));
    Tensor<S> x = concat_channels(tape, hsi, enc);
    x = gelu(tape, n1.forward(tape, c1.forward(tape, x)));
    x = gelu(tape, n2.forward(tape, c2.forward(tape, x)));
    x = c3.forward(tape, x);
    return add(tape, x, hsi);
  }

  void collect(std::vector<Tensor<S>>& out) const {
    c1.collect(out);
    n1.collect(out);
    c2.collect(out);
    n2.collect(out);
    c3.collect(out);
  }
};

// g_n: 1x1 conv C -> 16, instance norm, GELU, 1x1 conv 16 -> 1. Purely
// spectral mixing; each block owns its parameters.
template <class S>
struct BandBlock {
  ConvLayer<S> c1, c2;
  InstanceNormLayer<S> n1;

  static BandBlock make(int bands, Rng& rng, int width = 16) {
    BandBlock b;
    b.c1 = ConvLayer<S>::make(1, 1, bands, width, rng);
    b.n1 = InstanceNormLayer<S>::make(width);
    b.c2 = ConvLayer<S>::make(1, 1, width, 1, rng);
    return b;
  }

  Tensor<S> forward(Tape<S>* tape, const Tensor<S>& x) const {
    return c2.forward(tape, gelu(tape, n1.forward(tape, c1.forward(tape, x))));
  }

  void collect(std::vector<Tensor<S>>& out) const {
    c1.collect(out);
    n1.collect(out);
    c2.collect(out);
  }
};

// concat(g_1(x), ..., g_c(x))
template <class S>
Tensor<S> band_project(Tape<S>* tape, const std::vector<BandBlock<S>>& blocks,
                       const Tensor<S>& x) {
  if (blocks.empty()) throw ShapeError("band_project: no blocks configured");
  std::vector<Tensor<S>> parts;
  parts.reserve(blocks.size());
  for (const auto& b : blocks) parts.push_back(b.forward(tape, x));
  return concat_channels(tape, parts);
}

}  // namespace pidm
