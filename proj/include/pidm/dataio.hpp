#pragma once

// Cube persistence and ingestion. On-disk canonical form: raw 32-bit
// little-endian reals in band-sequential order plus a structured-text sidecar
// header ("<path>.hdr"). A small ENVI subset (BSQ/BIL/BIP, data types 4 and
// 12) is read directly.

#include <cstdint>
#include <string>
#include <vector>

#include "pidm/tensor.hpp"

namespace pidm::io {

struct CubeHeader {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::string dtype = "f32le";
  std::string interleave = "bsq";
  double range_min = 0.0;
  double range_max = 0.0;
  std::vector<double> wavelengths;  // optional
};

std::string sidecar_path(const std::string& cube_path);
std::string serialize_cube_header(const CubeHeader& h);
CubeHeader parse_cube_header(const std::string& text, const std::string& origin);

void write_bytes(const std::string& path, const void* data, std::size_t size);
std::vector<unsigned char> read_bytes(const std::string& path);

// Raw cube blob IO, band-sequential float32 little-endian.
void write_cube_f32(const std::string& path, const CubeHeader& h, const std::vector<float>& bsq);
std::vector<float> read_cube_f32(const std::string& path, CubeHeader& h);

struct EnviHeader {
  int samples = 0;
  int lines = 0;
  int bands = 0;
  int data_type = 0;
  int byte_order = 0;
  int header_offset = 0;
  std::string interleave = "bsq";
};

EnviHeader parse_envi_header(const std::string& text, const std::string& origin);
// Loads the blob next to the .hdr, honors byte order and interleave, scales
// to [0, 1] by the observed range. Returns (h, w, c)-ordered values.
std::vector<float> read_envi_f32(const std::string& header_path, EnviHeader& h);

// 8-bit portable graymap preview, min-max normalized.
void write_pgm(const std::string& path, const float* data, int h, int w, int stride);

std::uint64_t fnv1a64_file(const std::string& path);

// ---------------------------------------------------------------------------
// tensor adapters

template <class S>
void write_cube(const Tensor<S>& t, const std::string& path) {
  expect_rank(t, 3, "write_cube");
  const int h = t.extent(0), w = t.extent(1), c = t.extent(2);
  CubeHeader hd;
  hd.height = h;
  hd.width = w;
  hd.bands = c;
  double lo = double(t.data()[0]), hi = double(t.data()[0]);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    lo = std::min(lo, double(t.data()[i]));
    hi = std::max(hi, double(t.data()[i]));
  }
  hd.range_min = lo;
  hd.range_max = hi;
  std::vector<float> bsq(static_cast<std::size_t>(t.numel()), 0.0f);
  std::size_t q = 0;
  for (int b = 0; b < c; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) bsq[q++] = float(t.data()[idx3(y, x, b, w, c)]);
  write_cube_f32(path, hd, bsq);
}

template <class S>
Tensor<S> read_cube(const std::string& path) {
  CubeHeader hd;
  const std::vector<float> bsq = read_cube_f32(path, hd);
  Tensor<S> t = Tensor<S>::zeros({hd.height, hd.width, hd.bands});
  std::size_t q = 0;
  for (int b = 0; b < hd.bands; ++b)
    for (int y = 0; y < hd.height; ++y)
      for (int x = 0; x < hd.width; ++x) t.data()[idx3(y, x, b, hd.width, hd.bands)] = S(bsq[q++]);
  return t;
}

template <class S>
Tensor<S> read_envi(const std::string& header_path) {
  EnviHeader h;
  const std::vector<float> hwc = read_envi_f32(header_path, h);
  Tensor<S> t = Tensor<S>::zeros({h.lines, h.samples, h.bands});
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = S(hwc[std::size_t(i)]);
  return t;
}

// Partition the bands into `target` contiguous groups (sizes differing by at
// most one) and average each group.
template <class S>
Tensor<S> compress_bands(const Tensor<S>& cube, int target) {
  expect_rank(cube, 3, "compress_bands");
  const int C = cube.extent(2);
  if (target <= 0) throw ShapeError("compress_bands: target must be positive");
  if (target > C)
    throw ShapeError("compress_bands: target " + std::to_string(target) + " exceeds band count " +
                     std::to_string(C));
  const int h = cube.extent(0), w = cube.extent(1);
  Tensor<S> out = Tensor<S>::zeros({h, w, target});
  for (int g = 0; g < target; ++g) {
    const int b0 = int(std::int64_t(g) * C / target);
    const int b1 = int(std::int64_t(g + 1) * C / target);
    const S inv = S(1) / S(b1 - b0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S acc = 0;
        for (int b = b0; b < b1; ++b) acc += cube.data()[idx3(y, x, b, w, C)];
        out.data()[idx3(y, x, g, w, target)] = acc * inv;
      }
  }
  return out;
}

template <class S>
void write_band_pgm(const Tensor<S>& t, int band, const std::string& path) {
  expect_rank(t, 3, "write_band_pgm");
  const int h = t.extent(0), w = t.extent(1), c = t.extent(2);
  if (band < 0 || band >= c) throw ShapeError("write_band_pgm: band out of range");
  std::vector<float> plane(std::size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      plane[std::size_t(y) * w + x] = float(t.data()[idx3(y, x, band, w, c)]);
  write_pgm(path, plane.data(), h, w, w);
}

}  // namespace pidm::io
