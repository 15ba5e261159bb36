#include "pidm/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pidm/errors.hpp"

namespace pidm::io {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return s;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string sidecar_path(const std::string& cube_path) { return cube_path + ".hdr"; }

std::string serialize_cube_header(const CubeHeader& h) {
  std::ostringstream os;
  os << "height=" << h.height << '\n';
  os << "width=" << h.width << '\n';
  os << "bands=" << h.bands << '\n';
  os << "dtype=" << h.dtype << '\n';
  os << "interleave=" << h.interleave << '\n';
  os << "range_min=" << fmt_double(h.range_min) << '\n';
  os << "range_max=" << fmt_double(h.range_max) << '\n';
  if (!h.wavelengths.empty()) {
    os << "wavelengths=";
    for (std::size_t i = 0; i < h.wavelengths.size(); ++i)
      os << (i ? "," : "") << fmt_double(h.wavelengths[i]);
    os << '\n';
  }
  return os.str();
}

CubeHeader parse_cube_header(const std::string& text, const std::string& origin) {
  CubeHeader h;
  bool saw_height = false, saw_width = false, saw_bands = false;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("malformed cube header line in " + origin + ": " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "height") {
      h.height = std::stoi(val);
      saw_height = true;
    } else if (key == "width") {
      h.width = std::stoi(val);
      saw_width = true;
    } else if (key == "bands") {
      h.bands = std::stoi(val);
      saw_bands = true;
    } else if (key == "dtype") {
      h.dtype = val;
    } else if (key == "interleave") {
      h.interleave = val;
    } else if (key == "range_min") {
      h.range_min = std::stod(val);
    } else if (key == "range_max") {
      h.range_max = std::stod(val);
    } else if (key == "wavelengths") {
      std::istringstream ws(val);
      std::string tok;
      while (std::getline(ws, tok, ',')) h.wavelengths.push_back(std::stod(tok));
    } else {
      throw DataError("unknown cube header field '" + key + "' in " + origin);
    }
  }
  if (!saw_height || !saw_width || !saw_bands)
    throw DataError("cube header missing height/width/bands: " + origin);
  if (h.height <= 0 || h.width <= 0 || h.bands <= 0)
    throw DataError("cube header has non-positive extents: " + origin);
  if (h.dtype != "f32le") throw DataError("unsupported cube dtype '" + h.dtype + "' in " + origin);
  if (h.interleave != "bsq")
    throw DataError("unsupported cube interleave '" + h.interleave + "' in " + origin);
  return h;
}

void write_bytes(const std::string& path, const void* data, std::size_t size) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(static_cast<const char*>(data), std::streamsize(size));
  if (!f) throw DataError("short write: " + path);
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cannot open: " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> out(static_cast<std::size_t>(n), 0);
  f.read(reinterpret_cast<char*>(out.data()), n);
  if (f.gcount() != n) throw DataError("short read: " + path);
  return out;
}

void write_cube_f32(const std::string& path, const CubeHeader& h, const std::vector<float>& bsq) {
  const std::size_t expect = std::size_t(h.height) * std::size_t(h.width) * std::size_t(h.bands);
  if (bsq.size() != expect) throw ShapeError("cube blob size does not match header: " + path);
  const std::string header = serialize_cube_header(h);
  write_bytes(sidecar_path(path), header.data(), header.size());
  write_bytes(path, bsq.data(), bsq.size() * 4);
}

std::vector<float> read_cube_f32(const std::string& path, CubeHeader& h) {
  const std::vector<unsigned char> htext = read_bytes(sidecar_path(path));
  h = parse_cube_header(std::string(htext.begin(), htext.end()), sidecar_path(path));
  const std::vector<unsigned char> blob = read_bytes(path);
  const std::size_t expect =
      std::size_t(h.height) * std::size_t(h.width) * std::size_t(h.bands) * 4;
  if (blob.size() != expect)
    throw DataError("cube blob is " + std::to_string(blob.size()) + " bytes, header declares " +
                    std::to_string(expect) + ": " + path);
  std::vector<float> out(expect / 4);
  std::memcpy(out.data(), blob.data(), blob.size());
  const double lo = h.range_min, hi = h.range_max;
  for (float v : out)
    if (double(v) < lo || double(v) > hi)
      throw DataError("cube value " + std::to_string(v) + " outside declared range: " + path);
  return out;
}

EnviHeader parse_envi_header(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || trim(line) != "ENVI")
    throw DataError("not an ENVI header (missing ENVI sentinel): " + origin);
  EnviHeader h;
  bool saw_samples = false, saw_lines = false, saw_bands = false, saw_type = false;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = lower(trim(line.substr(0, eq)));
    std::string val = trim(line.substr(eq + 1));
    // skip brace-delimited blocks (band names, wavelengths, map info, ...)
    if (!val.empty() && val[0] == '{') {
      while (val.find('}') == std::string::npos && std::getline(is, line)) val += line;
      continue;
    }
    if (key == "samples") {
      h.samples = std::stoi(val);
      saw_samples = true;
    } else if (key == "lines") {
      h.lines = std::stoi(val);
      saw_lines = true;
    } else if (key == "bands") {
      h.bands = std::stoi(val);
      saw_bands = true;
    } else if (key == "data type") {
      h.data_type = std::stoi(val);
      saw_type = true;
    } else if (key == "byte order") {
      h.byte_order = std::stoi(val);
    } else if (key == "header offset") {
      h.header_offset = std::stoi(val);
    } else if (key == "interleave") {
      h.interleave = lower(val);
    }
  }
  if (!saw_samples) throw DataError("ENVI header missing 'samples': " + origin);
  if (!saw_lines) throw DataError("ENVI header missing 'lines': " + origin);
  if (!saw_bands) throw DataError("ENVI header missing 'bands': " + origin);
  if (!saw_type) throw DataError("ENVI header missing 'data type': " + origin);
  if (h.interleave != "bsq" && h.interleave != "bil" && h.interleave != "bip")
    throw DataError("unsupported ENVI interleave '" + h.interleave + "': " + origin);
  if (h.data_type != 4 && h.data_type != 12)
    throw DataError("unsupported ENVI data type " + std::to_string(h.data_type) +
                    " (supported: 4 = float32, 12 = uint16): " + origin);
  return h;
}

namespace {

std::string envi_data_path(const std::string& header_path) {
  if (header_path.size() > 4 && header_path.substr(header_path.size() - 4) == ".hdr")
    return header_path.substr(0, header_path.size() - 4);
  throw DataError("ENVI header path must end in .hdr: " + header_path);
}

double fetch_sample(const unsigned char* base, std::size_t idx, int data_type, bool swap) {
  if (data_type == 4) {
    unsigned char b[4];
    std::memcpy(b, base + idx * 4, 4);
    if (swap) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
    float v;
    std::memcpy(&v, b, 4);
    return double(v);
  }
  unsigned char b[2];
  std::memcpy(b, base + idx * 2, 2);
  if (swap) std::swap(b[0], b[1]);
  std::uint16_t v;
  std::memcpy(&v, b, 2);
  return double(v);
}

}  // namespace

std::vector<float> read_envi_f32(const std::string& header_path, EnviHeader& h) {
  const std::vector<unsigned char> htext = read_bytes(header_path);
  h = parse_envi_header(std::string(htext.begin(), htext.end()), header_path);
  const std::string data_path = envi_data_path(header_path);
  const std::vector<unsigned char> blob = read_bytes(data_path);

  const std::size_t n = std::size_t(h.samples) * std::size_t(h.lines) * std::size_t(h.bands);
  const std::size_t unit = h.data_type == 4 ? 4 : 2;
  if (blob.size() < std::size_t(h.header_offset) + n * unit)
    throw DataError("ENVI data file too small for declared extents: " + data_path);
  const unsigned char* base = blob.data() + h.header_offset;
  const bool swap = h.byte_order == 1;

  const int hh = h.lines, ww = h.samples, cc = h.bands;
  std::vector<double> hwc(n);
  for (int y = 0; y < hh; ++y)
    for (int x = 0; x < ww; ++x)
      for (int b = 0; b < cc; ++b) {
        std::size_t idx;
        if (h.interleave == "bsq")
          idx = (std::size_t(b) * hh + y) * ww + x;
        else if (h.interleave == "bil")
          idx = (std::size_t(y) * cc + b) * ww + x;
        else  // bip
          idx = (std::size_t(y) * ww + x) * cc + b;
        hwc[(std::size_t(y) * ww + x) * cc + b] = fetch_sample(base, idx, h.data_type, swap);
      }

  double lo = hwc[0], hi = hwc[0];
  for (double v : hwc) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<float> out(n);
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < n; ++i) out[i] = float((hwc[i] - lo) / span);
  return out;
}

void write_pgm(const std::string& path, const float* data, int h, int w, int stride) {
  float lo = data[0], hi = data[0];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      lo = std::min(lo, data[y * stride + x]);
      hi = std::max(hi, data[y * stride + x]);
    }
  const float span = hi > lo ? hi - lo : 1.0f;
  std::ostringstream os;
  os << "P5\n" << w << ' ' << h << "\n255\n";
  std::string head = os.str();
  std::vector<unsigned char> buf(head.begin(), head.end());
  buf.reserve(buf.size() + std::size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = (data[y * stride + x] - lo) / span;
      buf.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
  write_bytes(path, buf.data(), buf.size());
}

std::uint64_t fnv1a64_file(const std::string& path) {
  const std::vector<unsigned char> bytes = read_bytes(path);
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

}  // namespace pidm::io
