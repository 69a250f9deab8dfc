#include "flowify/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "flowify/data.hpp"
#include "flowify/errors.hpp"

namespace flowify {

std::uint8_t to_pixel(double v) {
  if (std::isnan(v)) return 0;
  const double r = std::round(256.0 * v);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

Image tile_grid(const DiffArray& samples) {
  if (samples.rank() != 4 || (samples.dim(1) != 1 && samples.dim(1) != 3)) {
    throw DimensionError("tile_grid expects [n, 1 | 3, H, W], got " + shape_string(samples.shape()));
  }
  const std::size_t n = samples.dim(0), c = samples.dim(1), h = samples.dim(2), w = samples.dim(3);
  const std::size_t cols = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(double(n)))));
  const std::size_t rows = std::max<std::size_t>(1, (n + cols - 1) / cols);
  Image img;
  img.width = cols * w;
  img.height = rows * h;
  img.channels = c;
  img.pixels.assign(img.width * img.height * c, 0);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t ty = s / cols, tx = s % cols;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double v = samples[((s * c + ch) * h + y) * w + x];
          img.pixels[((ty * h + y) * img.width + tx * w + x) * c + ch] = to_pixel(v);
        }
  }
  return img;
}

std::vector<std::uint8_t> encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DimensionError("PNM needs 1 or 3 channels");
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(image.width) + " " + std::to_string(image.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image decode_pnm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw ParseError(std::string("PNM header: expected ") + what, start);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("not a binary PGM/PPM file", 0);
  }
  Image img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval != 255) throw ParseError("only maxval 255 is supported", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ParseError("PNM header not terminated", pos);
  ++pos;
  const std::size_t need = img.width * img.height * img.channels;
  if (bytes.size() - pos < need) {
    throw ParseError("PNM payload truncated: expected " + std::to_string(need) + " bytes, got " +
                         std::to_string(bytes.size() - pos),
                     bytes.size());
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

void write_pnm(const std::string& path, const Image& image) {
  const auto bytes = encode_pnm(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write image " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("cannot write image " + path);
}

Image read_pnm(const std::string& path) { return decode_pnm(read_file_bytes(path)); }

}  // namespace flowify
