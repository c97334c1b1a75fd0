#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flowstab {

// Row-major single-channel rasters.
struct ImageU16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;
};

struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

// Strict 16-bit grayscale read for depth rasters; throws on a missing file or
// any other color type or bit depth.
ImageU16 read_png_gray16(const std::string& path);

// Tolerant 8-bit grayscale read: color, palette, alpha and 16-bit inputs are
// converted so any PNG can serve as an intensity frame.
ImageU8 read_png_gray8(const std::string& path);

void write_png_gray16(const std::string& path, const ImageU16& image);
void write_png_gray8(const std::string& path, const ImageU8& image);

}  // namespace flowstab
