#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace semgs {

struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels; // row-major
};

void write_png_rgb8(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);
void write_png_gray16(const std::filesystem::path& path, const LabelImage& image);

/// Reads an 8- or 16-bit grayscale PNG without any gamma or scaling.
LabelImage read_png_gray(const std::filesystem::path& path);

} // namespace semgs
