#include "flowify/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "flowify/errors.hpp"

namespace flowify {

DiffArray Dataset::batch(std::size_t begin, std::size_t end) const {
  if (begin > end || end > count) throw DimensionError("dataset batch out of range");
  const std::size_t d = dims();
  std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(begin * d),
                        values.begin() + static_cast<std::ptrdiff_t>(end * d));
  Shape s{end - begin};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return DiffArray(std::move(s), std::move(v));
}

DiffArray Dataset::gather_rows(std::span<const std::size_t> rows) const {
  const std::size_t d = dims();
  std::vector<double> v(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= count) throw DimensionError("dataset row out of range");
    std::copy_n(values.data() + rows[i] * d, d, v.data() + i * d);
  }
  Shape s{rows.size()};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return DiffArray(std::move(s), std::move(v));
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.integer_pixels = integer_pixels;
  out.count = rows.size();
  out.values = gather_rows(rows).to_vector();
  return out;
}

DiffArray dequantize(const DiffArray& pixels, Rng& rng) {
  std::vector<double> out(pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double k = pixels[i];
    if (k != std::floor(k) || k < 0.0 || k > 255.0) {
      throw DataError("pixel value " + std::to_string(k) + " is not an integer in 0..255");
    }
    out[i] = (k + rng.uniform()) / 256.0;
  }
  return DiffArray(pixels.shape(), std::move(out));
}

// ---- IDX -------------------------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open '" + path + "'");
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  const std::string message = msg ? msg : "";
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw DataError("error reading '" + path + "': " + message);
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 4 > b.size()) {
    throw ParseError("IDX header truncated: need " + std::to_string(off + 4) + " bytes, have " +
                         std::to_string(b.size()),
                     b.size());
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

Dataset parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    std::ostringstream m;
    m << "bad IDX image magic 0x" << std::hex << magic << " (expected 0x803)";
    throw ParseError(m.str(), 0);
  }
  const std::size_t n = read_be32(bytes, 4), h = read_be32(bytes, 8), w = read_be32(bytes, 12);
  const std::size_t expected = 16 + n * h * w;
  if (bytes.size() < expected) {
    throw ParseError("IDX payload truncated: expected " + std::to_string(expected) +
                         " bytes, got " + std::to_string(bytes.size()),
                     bytes.size());
  }
  Dataset d;
  d.sample_shape = {1, h, w};
  d.count = n;
  d.integer_pixels = true;
  d.values.assign(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(expected));
  return d;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxLabelMagic) {
    std::ostringstream m;
    m << "bad IDX label magic 0x" << std::hex << magic << " (expected 0x801)";
    throw ParseError(m.str(), 0);
  }
  const std::size_t n = read_be32(bytes, 4);
  if (bytes.size() < 8 + n) {
    throw ParseError("IDX labels truncated: expected " + std::to_string(8 + n) + " bytes, got " +
                         std::to_string(bytes.size()),
                     bytes.size());
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

Dataset load_idx(const std::string& path) { return parse_idx_images(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_idx_images(std::size_t n, std::size_t h, std::size_t w,
                                            std::span<const std::uint8_t> pixels) {
  if (pixels.size() != n * h * w) throw DimensionError("encode_idx_images: pixel count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(16 + pixels.size());
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(n));
  put_be32(out, static_cast<std::uint32_t>(h));
  put_be32(out, static_cast<std::uint32_t>(w));
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

// ---- CSV -------------------------------------------------------------------------------

namespace {

bool parse_numbers(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t next = line.find(',', pos);
    if (next == std::string::npos) next = line.size();
    const std::string cell = line.substr(pos, next - pos);
    std::size_t used = 0;
    try {
      out.push_back(std::stod(cell, &used));
    } catch (const std::exception&) {
      return false;
    }
    while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
    if (used != cell.size()) return false;
    pos = next + 1;
  }
  return true;
}

}  // namespace

Dataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Dataset d;
  std::vector<double> row;
  std::size_t line_no = 0, width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!parse_numbers(line, row)) {
      if (d.count == 0 && width == 0 && line_no == 1) continue;  // header
      throw DataError("csv line " + std::to_string(line_no) + " is not numeric");
    }
    if (width == 0) width = row.size();
    if (row.size() != width) {
      throw DataError("csv line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                      " fields, expected " + std::to_string(width));
    }
    d.values.insert(d.values.end(), row.begin(), row.end());
    ++d.count;
  }
  if (d.count == 0) throw DataError("csv has no data rows");
  d.sample_shape = {width};
  return d;
}

Dataset load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

// ---- mixture -----------------------------------------------------------------------------

GaussianMixture2d::GaussianMixture2d(std::vector<MixtureComponent> components)
    : comps_(std::move(components)) {
  if (comps_.empty()) throw ConfigError("mixture needs at least one component");
  double total = 0.0;
  for (const auto& c : comps_) {
    if (!(c.weight > 0.0) || !(c.std > 0.0)) throw ConfigError("mixture weights and stds must be positive");
    total += c.weight;
  }
  for (auto& c : comps_) c.weight /= total;
}

double GaussianMixture2d::log_pdf(double x, double y) const {
  std::vector<double> terms;
  terms.reserve(comps_.size());
  for (const auto& c : comps_) {
    const double dx = (x - c.mean_x) / c.std, dy = (y - c.mean_y) / c.std;
    terms.push_back(std::log(c.weight) - 0.5 * (dx * dx + dy * dy) - 2.0 * std::log(c.std) -
                    std::log(2.0 * M_PI));
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

Dataset GaussianMixture2d::sample(std::size_t n, Rng& rng) const {
  Dataset d;
  d.sample_shape = {2};
  d.count = n;
  d.values.resize(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < comps_.size() && u >= comps_[k].weight) u -= comps_[k++].weight;
    d.values[2 * i] = comps_[k].mean_x + comps_[k].std * rng.normal();
    d.values[2 * i + 1] = comps_[k].mean_y + comps_[k].std * rng.normal();
  }
  return d;
}

double GaussianMixture2d::mean_nll(const Dataset& data) const {
  if (data.dims() != 2) throw DimensionError("mixture: dataset must be 2-D");
  double s = 0.0;
  for (std::size_t i = 0; i < data.count; ++i) s -= log_pdf(data.values[2 * i], data.values[2 * i + 1]);
  return s / static_cast<double>(data.count);
}

// ---- splits ------------------------------------------------------------------------------

Split split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(data.count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5eed5011ULL));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.next_u64() % i]);
  }
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.count)));
  if (n_test == 0 || n_test >= data.count) throw ConfigError("split leaves an empty train or test set");
  Split s;
  s.test = data.subset(std::span(order).first(n_test));
  s.train = data.subset(std::span(order).subspan(n_test));
  return s;
}

void standardize(Split& split) {
  const std::size_t d = split.train.dims();
  const std::size_t n = split.train.count;
  if (n < 2) throw DataError("standardize needs at least two training rows");
  split.mean.assign(d, 0.0);
  split.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) split.mean[j] += split.train.values[i * d + j];
  for (auto& m : split.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double e = split.train.values[i * d + j] - split.mean[j];
      split.stddev[j] += e * e;
    }
  for (auto& s : split.stddev) {
    s = std::sqrt(s / static_cast<double>(n - 1));
    if (s == 0.0) s = 1.0;
  }
  for (Dataset* ds : {&split.train, &split.test}) {
    for (std::size_t i = 0; i < ds->count; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double& v = ds->values[i * d + j];
        v = (v - split.mean[j]) / split.stddev[j];
      }
  }
}

}  // namespace flowify
