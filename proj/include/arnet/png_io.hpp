#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arnet/common.hpp"

namespace arnet {

// Interleaved 8-bit image, row-major, `channels` in {1,3,4}.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// 8-bit non-interlaced PNG: gray, gray+alpha, RGB and RGBA are readable;
// palette or 16-bit files are rejected.  All five scanline filters decode.
ImageU8 read_png(const std::string& path);

// Writes gray/RGB/RGBA depending on image.channels (filter 0 scanlines).
void write_png(const std::string& path, const ImageU8& image);

// Content hash over dimensions plus decoded pixel bytes — independent of how
// the file was compressed.  Used for golden-image checks.
std::uint64_t pixel_hash(const ImageU8& image);

}  // namespace arnet
