#pragma once
// In-memory datasets and their loaders.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowify/diffarray.hpp"
#include "json.hpp"

namespace flowify {

/// Row-major samples of a fixed per-sample shape.
struct Dataset {
  Shape sample_shape;
  std::size_t count = 0;
  std::vector<double> values;
  /// Integer intensities 0..255 that are dequantized before use.
  bool integer_pixels = false;

  std::size_t dims() const { return numel(sample_shape); }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * dims(), dims()};
  }
  /// Raw rows [begin, end) as a [n, sample_shape...] array.
  DiffArray batch(std::size_t begin, std::size_t end) const;
  /// Rows by index.
  DiffArray gather_rows(std::span<const std::size_t> rows) const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

/// (k + u) / 256 with u ~ U[0, 1); throws DataError on non-integer or out-of-range pixels.
DiffArray dequantize(const DiffArray& pixels, Rng& rng);

// ---- IDX -------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads a file, inflating it when it carries a gzip header.
std::vector<std::uint8_t> read_file_bytes(const std::string& path);

/// Images as [N, 1, H, W] integer pixels. Throws ParseError with the byte offset.
Dataset parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
Dataset load_idx(const std::string& path);

/// Big-endian IDX image file from [N, H, W] pixels (used by fixtures and tools).
std::vector<std::uint8_t> encode_idx_images(std::size_t n, std::size_t h, std::size_t w,
                                            std::span<const std::uint8_t> pixels);

// ---- CSV -------------------------------------------------------------------------

/// Numeric CSV; a first line that does not parse as numbers is taken as a header.
Dataset load_csv(const std::string& path);
Dataset parse_csv(const std::string& text);

// ---- toy data ------------------------------------------------------------------------

struct MixtureComponent {
  double weight = 1.0;
  double mean_x = 0.0, mean_y = 0.0;
  double std = 1.0;
};

/// Isotropic 2-D Gaussian mixture.
class GaussianMixture2d {
 public:
  explicit GaussianMixture2d(std::vector<MixtureComponent> components);

  double log_pdf(double x, double y) const;
  Dataset sample(std::size_t n, Rng& rng) const;
  /// Mean negative log-density of a dataset under the mixture.
  double mean_nll(const Dataset& data) const;
  const std::vector<MixtureComponent>& components() const { return comps_; }

 private:
  std::vector<MixtureComponent> comps_;
};

// ---- splits ------------------------------------------------------------------------

struct Split {
  Dataset train;
  Dataset test;
  /// Per-feature mean / std when standardized (computed on the train split only).
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Seeded shuffle, then the first round(test_fraction * N) rows become the test split.
Split split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed);
/// Standardizes both splits with train-split statistics.
void standardize(Split& split);

}  // namespace flowify
