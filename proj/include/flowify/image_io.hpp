#pragma once
// Binary PGM / PPM grids of sample tiles.

#include <cstdint>
#include <string>
#include <vector>

#include "flowify/diffarray.hpp"

namespace flowify {

struct Image {
  std::size_t width = 0, height = 0;
  /// 1 (PGM) or 3 (PPM).
  std::size_t channels = 1;
  /// Row-major, interleaved channels.
  std::vector<std::uint8_t> pixels;
};

/// clamp(round(256 v), 0, 255).
std::uint8_t to_pixel(double v);

/// Tiles samples [n, C, H, W] (C = 1 or 3) on a ceil(sqrt(n)) x ceil(n / cols) grid.
/// Unused cells stay black.
Image tile_grid(const DiffArray& samples);

std::vector<std::uint8_t> encode_pnm(const Image& image);
/// Reads P5 / P6 with maxval 255. Throws ParseError.
Image decode_pnm(const std::vector<std::uint8_t>& bytes);

/// Throws Error if the file cannot be written.
void write_pnm(const std::string& path, const Image& image);
Image read_pnm(const std::string& path);

}  // namespace flowify
