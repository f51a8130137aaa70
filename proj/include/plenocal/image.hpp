#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace plenocal {

/// Single-channel raster, row major. 8-bit files are widened on load.
struct Raster16 {
  int width = 0;
  int height = 0;
  int max_value = 65535;
  std::vector<std::uint16_t> pixels;

  Raster16() = default;
  Raster16(int w, int h, int maxval = 65535)
      : width(w), height(h), max_value(maxval), pixels(static_cast<std::size_t>(w) * h, 0) {}

  std::uint16_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Binary PGM (P5), 8 or 16 bit.
Raster16 read_pgm(const std::string& path);
/// Writes 16-bit when max_value > 255, else 8-bit.
void write_pgm(const std::string& path, const Raster16& image);

}  // namespace plenocal
