// mask_unify.hpp
//
// Turns pixel-level feature maps, instance masks with embeddings and region
// proposals with embeddings into one uniform per-pixel FeatureMap.

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "semgs/feature_map.hpp"
#include "semgs/image_io.hpp"

namespace semgs {

struct Mask {
  int id = 0;
  std::vector<std::uint8_t> pixels; // H*W, 0 or 1
  int area = 0;
  std::array<int, 4> bbox{0, 0, -1, -1}; // x0, y0, x1, y1 inclusive
  std::optional<std::vector<float>> embedding;
};

struct MaskSet {
  int height = 0;
  int width = 0;
  std::vector<Mask> masks;

  /// Adds a mask and fills in area and bbox from its pixels.
  Mask& add(int id, std::vector<std::uint8_t> pixels, std::optional<std::vector<float>> embedding = std::nullopt);

  /// Throws DataError on duplicate ids, wrong sizes or stale area metadata.
  void validate() const;

  /// Masks in processing order: descending area, ascending id on ties.
  std::vector<std::size_t> processing_order() const;

  /// For every pixel, the index of the last mask in processing order that covers it, or -1.
  std::vector<int> owners() const;
};

enum class UnifyMode { pixel, instance, image };

/// Pixel mode: every mask's pixels take the mean source feature of the pixels it owns.
FeatureMap unify_pixel(const FeatureMap& source, const MaskSet& masks);

/// Instance / image mode: every mask's pixels take that mask's embedding.
FeatureMap unify_embeddings(const MaskSet& masks, UnifyMode mode);

/// Dispatches on `mode`; `source` is required for pixel mode and ignored otherwise.
FeatureMap unify(UnifyMode mode, const MaskSet& masks, const FeatureMap* source = nullptr);

/// Instance id map -> one-hot FeatureMap with C = num_ids; id 0 stays unassigned.
FeatureMap one_hot_ids(const LabelImage& ids, int num_ids);

/// JSON sidecar plus a 16-bit label PNG (same stem) or one PNG per mask when masks overlap.
MaskSet read_mask_set(const std::filesystem::path& json_path);
void write_mask_set(const MaskSet& masks, const std::filesystem::path& json_path);

} // namespace semgs
