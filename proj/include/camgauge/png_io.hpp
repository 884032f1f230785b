#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "camgauge/core.hpp"

namespace camgauge::png {

/// 8-bit interleaved pixels as decoded from / encoded to disk.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> data;
};

/// Decodes any PNG into 8-bit RGB (channels = 3) or gray (channels = 1). Throws IoError.
Raster read(const std::filesystem::path& path, bool force_rgb = true);

/// Writes 8-bit gray or RGB.
void write(const std::filesystem::path& path, const Raster& raster);

/// Writes a 1-bit grayscale PNG; nonzero bytes become white.
void write_bitmask(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& bits);

/// Quantizes a [0, 1] image to 8 bits (round to nearest) and back.
Raster to_raster(const Image& image);
Image to_image(const Raster& raster);

}  // namespace camgauge::png
