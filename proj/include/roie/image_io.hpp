#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace roie {

// 8-bit image, interleaved (row-major, channels fastest). channels is 1 or 3.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
};

// Decodes PNG or JPEG by file signature. Gray+alpha and RGBA inputs drop
// alpha; palette and 16-bit PNGs are expanded to 8-bit. `want_channels`
// (1 or 3) converts gray<->RGB (RGB->gray uses the ITU-R 601 luma weights).
// Throws IngestionError on unreadable or unsupported files.
Image8 read_image(const std::filesystem::path& path, int want_channels);

// Writes an 8-bit gray or RGB PNG. Throws IoError.
void write_png(const std::filesystem::path& path, const Image8& image);

}  // namespace roie
