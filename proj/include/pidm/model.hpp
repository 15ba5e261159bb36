#pragma once

// The full trainable degradation model: SpaDN (warp + blur + decimate) and
// SpeDN (modulate + band projection), with the ablation switches of the base
// configurations and file round-tripping.
//
// Model file layout: 8-byte magic "PIDMv001", ASCII key=value header lines,
// a final "blob=<bytes>" line, then every trainable tensor as 32-bit
// little-endian reals in params() order.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pidm/kernels.hpp"
#include "pidm/spadn.hpp"
#include "pidm/spedn.hpp"

namespace pidm {

inline constexpr char kModelMagic[9] = "PIDMv001";

struct PidmConfig {
  int bands_hsi = 0;  // C
  int bands_msi = 0;  // c
  int scale_y = 4;
  int scale_x = 4;
  int kernel_size = 25;
  double trunc_eps = 3.0;
  int enc_dim = 32;
  std::uint64_t seed = 0;
  // ablation switches; all on = full model
  bool enable_pd = true;
  bool enable_ad = true;
  bool enable_sm = true;
  bool enable_sw = true;
};

template <class S>
struct PidmModel {
  PidmConfig cfg;
  WarpGen<S> wgen;                   // SW
  KernelParams<S> kparams;           // AD (trainable)
  Tensor<S> fixed_kernel;            // AD off: centered isotropic Gaussian
  EncodingGen<S> egen;               // SM
  Modulator<S> smn;                  // SM
  std::vector<BandBlock<S>> blocks;  // PD
  Tensor<S> spectral_matrix;         // PD off: single trainable C -> c matrix
  Tensor<S> matrix_bias_;            // constant zero, PD off path

  static PidmModel init(const PidmConfig& cfg) {
    if (cfg.bands_hsi < 1 || cfg.bands_msi < 1)
      throw ShapeError("model init: band counts must be positive");
    if (cfg.bands_msi > cfg.bands_hsi)
      throw ShapeError("model init: MSI band count exceeds HSI band count");
    if (cfg.kernel_size % 2 == 0) throw ShapeError("model init: kernel size must be odd");
    PidmModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    if (cfg.enable_sw) {
      WarpGenConfig<S> wc;
      wc.trunc_eps = S(cfg.trunc_eps);
      m.wgen = WarpGen<S>::make(rng, wc);
    }
    if (cfg.enable_ad) {
      m.kparams = KernelParams<S>::make(0, 0, 3, 3, 0, cfg.kernel_size, /*requires_grad=*/true);
    } else {
      m.fixed_kernel = standard_kernel(cfg.kernel_size);
    }
    if (cfg.enable_sm) {
      m.egen = EncodingGen<S>::make(cfg.enc_dim, rng);
      m.smn = Modulator<S>::make(cfg.bands_hsi, cfg.enc_dim, rng);
    }
    if (cfg.enable_pd) {
      m.blocks.reserve(std::size_t(cfg.bands_msi));
      for (int n = 0; n < cfg.bands_msi; ++n)
        m.blocks.push_back(BandBlock<S>::make(cfg.bands_hsi, rng));
    } else {
      // every output band starts as the plain band average
      m.spectral_matrix =
          Tensor<S>::full({1, 1, cfg.bands_hsi, cfg.bands_msi}, S(1) / S(cfg.bands_hsi), true);
      m.matrix_bias_ = Tensor<S>::zeros({cfg.bands_msi}, false);
    }
    return m;
  }

  static Tensor<S> standard_kernel(int size) {
    auto kp = KernelParams<S>::make(0, 0, 3, 3, 0, size);
    return generate_kernel<S>(nullptr, kp);
  }

  // Trainable tensors in serialization order.
  std::vector<Tensor<S>> params() const {
    std::vector<Tensor<S>> out;
    if (cfg.enable_sw) wgen.collect(out);
    if (cfg.enable_ad) out.push_back(kparams.p);
    if (cfg.enable_sm) {
      egen.collect(out);
      smn.collect(out);
    }
    if (cfg.enable_pd) {
      for (const auto& b : blocks) b.collect(out);
    } else {
      out.push_back(spectral_matrix);
    }
    return out;
  }

  // Feasibility projection after each optimizer step.
  void project() {
    if (cfg.enable_ad) kparams.project();
  }

  // Gamma: SW-step then AD-step. Channel-count agnostic.
  Tensor<S> spatial_forward(Tape<S>* tape, const Tensor<S>& img) const {
    expect_rank(img, 3, "spatial_forward");
    const int H = img.extent(0), W = img.extent(1);
    if (H % cfg.scale_y || W % cfg.scale_x)
      throw ShapeError("spatial_forward: image " + shape_str(img.shape()) +
                       " not divisible by scale " + std::to_string(cfg.scale_y) + "x" +
                       std::to_string(cfg.scale_x));
    Tensor<S> x = img;
    if (cfg.enable_sw) {
      Tensor<S> field = generate_warp_field(tape, wgen, x);
      x = apply_warp(tape, x, field);
    }
    Tensor<S> k = cfg.enable_ad ? generate_kernel(tape, kparams) : fixed_kernel;
    DownsampleSpec spec{cfg.scale_y, cfg.scale_x, 0};
    return blur_and_decimate(tape, x, k, spec);
  }

  // Psi: SM-step then PD-step. Runs at any spatial extent >= 2.
  Tensor<S> spectral_forward(Tape<S>* tape, const Tensor<S>& hsi) const {
    expect_rank(hsi, 3, "spectral_forward");
    if (hsi.extent(2) != cfg.bands_hsi)
      throw ShapeError("spectral_forward: expected " + std::to_string(cfg.bands_hsi) +
                       " bands, got " + std::to_string(hsi.extent(2)));
    Tensor<S> x = hsi;
    if (cfg.enable_sm) {
      Tensor<S> grid = make_grid<S>(hsi.extent(0), hsi.extent(1));
      Tensor<S> enc = egen.forward(tape, grid);
      x = smn.forward(tape, x, enc);
    }
    if (cfg.enable_pd) return band_project(tape, blocks, x);
    return conv2d(tape, x, spectral_matrix, matrix_bias_);
  }
};

// --------------------------------------------------------------------------
// serialization

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void put_line(std::string& h, const std::string& key, const std::string& v) {
  h += key;
  h += '=';
  h += v;
  h += '\n';
}

}  // namespace detail

template <class S>
void save_model(const PidmModel<S>& m, const std::string& path) {
  std::vector<Tensor<S>> ps = m.params();
  std::int64_t count = 0;
  for (const auto& p : ps) count += p.numel();

  std::string header;
  detail::put_line(header, "bands_hsi", std::to_string(m.cfg.bands_hsi));
  detail::put_line(header, "bands_msi", std::to_string(m.cfg.bands_msi));
  detail::put_line(header, "scale_y", std::to_string(m.cfg.scale_y));
  detail::put_line(header, "scale_x", std::to_string(m.cfg.scale_x));
  detail::put_line(header, "kernel_size", std::to_string(m.cfg.kernel_size));
  detail::put_line(header, "trunc_eps", detail::fmt_double(m.cfg.trunc_eps));
  detail::put_line(header, "enc_dim", std::to_string(m.cfg.enc_dim));
  detail::put_line(header, "seed", std::to_string(m.cfg.seed));
  detail::put_line(header, "enable_pd", m.cfg.enable_pd ? "1" : "0");
  detail::put_line(header, "enable_ad", m.cfg.enable_ad ? "1" : "0");
  detail::put_line(header, "enable_sm", m.cfg.enable_sm ? "1" : "0");
  detail::put_line(header, "enable_sw", m.cfg.enable_sw ? "1" : "0");
  detail::put_line(header, "blob", std::to_string(count * 4));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open model file for writing: " + path);
  f.write(kModelMagic, 8);
  f.write(header.data(), std::streamsize(header.size()));
  std::vector<float> blob;
  blob.reserve(std::size_t(count));
  for (const auto& p : ps)
    for (std::int64_t i = 0; i < p.numel(); ++i) blob.push_back(float(p.data()[i]));
  f.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size() * 4));
  if (!f) throw DataError("short write to model file: " + path);
}

template <class S>
PidmModel<S> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open model file: " + path);
  char magic[8];
  f.read(magic, 8);
  if (f.gcount() != 8 || std::memcmp(magic, kModelMagic, 8) != 0)
    throw DataError("not a PIDM model file (bad magic): " + path);

  std::map<std::string, std::string> kv;
  std::string line;
  std::int64_t blob_bytes = -1;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed model header line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    kv[key] = val;
    if (key == "blob") {
      blob_bytes = std::stoll(val);
      break;
    }
  }
  auto need = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("model header missing field: ") + key);
    return it->second;
  };
  PidmConfig cfg;
  cfg.bands_hsi = std::stoi(need("bands_hsi"));
  cfg.bands_msi = std::stoi(need("bands_msi"));
  cfg.scale_y = std::stoi(need("scale_y"));
  cfg.scale_x = std::stoi(need("scale_x"));
  cfg.kernel_size = std::stoi(need("kernel_size"));
  cfg.trunc_eps = std::stod(need("trunc_eps"));
  cfg.enc_dim = std::stoi(need("enc_dim"));
  cfg.seed = std::stoull(need("seed"));
  cfg.enable_pd = need("enable_pd") == "1";
  cfg.enable_ad = need("enable_ad") == "1";
  cfg.enable_sm = need("enable_sm") == "1";
  cfg.enable_sw = need("enable_sw") == "1";
  if (blob_bytes < 0) throw DataError("model header missing blob size: " + path);

  PidmModel<S> m = PidmModel<S>::init(cfg);
  std::vector<Tensor<S>> ps = m.params();
  std::int64_t count = 0;
  for (const auto& p : ps) count += p.numel();
  if (count * 4 != blob_bytes)
    throw DataError("model blob size " + std::to_string(blob_bytes) + " does not match layout (" +
                    std::to_string(count * 4) + " expected): " + path);
  std::vector<float> blob(static_cast<std::size_t>(count), 0.0f);
  f.read(reinterpret_cast<char*>(blob.data()), std::streamsize(blob_bytes));
  if (f.gcount() != std::streamsize(blob_bytes))
    throw DataError("truncated model blob: " + path);
  std::size_t off = 0;
  for (auto& p : ps)
    for (std::int64_t i = 0; i < p.numel(); ++i) p.data()[i] = S(blob[off++]);
  return m;
}

}  // namespace pidm
