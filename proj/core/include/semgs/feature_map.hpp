#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace semgs {

/// H x W x C per-pixel embedding image with an assignment mask.
///
/// Unassigned pixels are exactly zero.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;           // row-major H*W*C
  std::vector<std::uint8_t> assigned; // H*W, 0 or 1

  FeatureMap() = default;
  FeatureMap(int h, int w, int c)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0.0f),
        assigned(static_cast<std::size_t>(h) * w, 0) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }

  std::span<float> pixel(std::size_t p) { return {data.data() + p * channels, static_cast<std::size_t>(channels)}; }
  std::span<const float> pixel(std::size_t p) const {
    return {data.data() + p * channels, static_cast<std::size_t>(channels)};
  }
  bool is_assigned(std::size_t p) const { return assigned[p] != 0; }

  void set(std::size_t p, std::span<const float> value);
  void clear(std::size_t p);

  /// Throws DataError on broken invariants.
  void validate() const;
};

enum class FeatureDtype : std::uint8_t { f32 = 0, f16 = 1 };

/// "SGFM" container.
FeatureMap read_feature_map(const std::filesystem::path& path);
void write_feature_map(const FeatureMap& map, const std::filesystem::path& path, FeatureDtype dtype = FeatureDtype::f32,
                       bool with_mask = true);

std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

} // namespace semgs
