#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bpeq {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
};

// Encodes as a truecolour PNG (filter type 0 on every row).
std::string encode_png(const RgbImage& image);

// Decodes PNGs produced by encode_png (8-bit RGB, no interlace, filter 0).
RgbImage decode_png(const std::string& bytes);

}  // namespace bpeq
