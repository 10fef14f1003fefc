// render.hpp
//
// Forward tile rasterizer for Gaussian scenes. The same front-to-back
// blending path renders RGB, arbitrary per-Gaussian feature channels
// (class confidences) and opacity-threshold depth.

#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "semgs/scene.hpp"

namespace semgs {

inline constexpr float kAlphaCap = 0.99f;
inline constexpr float kAlphaSkip = 1.0f / 255.0f;
inline constexpr float kTransmittanceStop = 1e-4f;
inline constexpr float kLowPassVariance = 0.3f;
/// Footprint cutoff: a splat only covers pixels within 3 sigma (squared Mahalanobis distance 9).
inline constexpr float kFootprintMahalanobisSq = 9.0f;
inline constexpr float kDefaultZNear = 0.01f;
inline constexpr int kTileSize = 16;
inline constexpr float kDefaultDepthAlpha = 0.5f;

/// Screen-space footprint of one Gaussian.
struct Splat2D {
  Eigen::Vector2f mean;  // pixels; pixel (x, y) has its center at (x + 0.5, y + 0.5)
  Eigen::Matrix2f cov;   // pixels^2, low-pass term included
  Eigen::Vector3f conic; // (a, b, c) of cov^-1 = [[a, b], [b, c]]
  float depth = 0.0f;    // camera-space z of the mean
  float opacity = 0.0f;
  // Conservative inclusive pixel bounds of the footprint, clipped to the image.
  int x_min = 0, y_min = 0, x_max = -1, y_max = -1;
};

/// Projects `g` into `cam`; std::nullopt when z <= z_near or the footprint misses the image.
std::optional<Splat2D> project_gaussian(const Gaussian& g, const Camera& cam, float z_near = kDefaultZNear);

/// Opacity contribution of `s` at pixel (x, y) before the skip threshold: 0 outside the footprint,
/// otherwise min(0.99, o * exp(-d^T cov^-1 d / 2)).
float splat_alpha(const Splat2D& s, int x, int y);

/// View-dependent color: sum of SH terms + 0.5, clamped to [0, 1].
Eigen::Vector3f eval_sh(std::span<const Eigen::Vector3f> sh, int degree, const Eigen::Vector3f& dir);

struct RenderedImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values; // H*W*K row-major
  std::vector<float> alpha;  // accumulated opacity 1 - T_final, H*W

  std::span<const float> pixel(std::size_t p) const {
    return {values.data() + p * channels, static_cast<std::size_t>(channels)};
  }
};

struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<float> depth; // +inf where invalid

  static constexpr float kInvalid = std::numeric_limits<float>::infinity();
  bool valid(std::size_t p) const { return depth[p] != kInvalid; }
  float at(int y, int x) const { return depth[static_cast<std::size_t>(y) * width + x]; }
};

struct RenderOptions {
  int workers = 1;
  float z_near = kDefaultZNear;
};

/// Visible splats of one view, globally depth-sorted and binned into tiles.
class Rasterization {
public:
  Rasterization(const GaussianScene& scene, const Camera& cam, const RenderOptions& options = {});

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<std::optional<Splat2D>>& splats() const { return splats_; }
  /// Gaussian indices overlapping tile t, front to back (depth, then index).
  const std::vector<std::uint32_t>& tile(std::size_t t) const { return tiles_[t]; }
  int tiles_x() const { return tiles_x_; }
  int tiles_y() const { return tiles_y_; }

  /// Blends per-Gaussian feature rows (N x K) over `background` (K values or empty for zeros).
  RenderedImage blend(const RowMatrixXf& features, std::span<const float> background, int workers) const;
  DepthMap depth(float alpha_threshold, int workers) const;

private:
  int width_ = 0, height_ = 0;
  int tiles_x_ = 0, tiles_y_ = 0;
  std::vector<std::optional<Splat2D>> splats_;
  std::vector<std::vector<std::uint32_t>> tiles_;
};

/// Per-Gaussian SH colors as seen from the camera center.
RowMatrixXf view_colors(const GaussianScene& scene, const Camera& cam);

RenderedImage render_rgb(const GaussianScene& scene, const Camera& cam,
                         const Eigen::Vector3f& background = Eigen::Vector3f::Zero(), const RenderOptions& options = {});

/// Depth of the first splat whose inclusion makes accumulated opacity reach `alpha_threshold`.
DepthMap render_depth(const GaussianScene& scene, const Camera& cam, float alpha_threshold = kDefaultDepthAlpha,
                      const RenderOptions& options = {});

/// Blends N x K per-Gaussian confidences over a zero background.
RenderedImage render_confidence(const GaussianScene& scene, const Camera& cam, const RowMatrixXf& confidences,
                                const RenderOptions& options = {});

/// Per-pixel argmax over channels, lowest channel index on ties.
std::vector<int> argmax_channels(const RenderedImage& image);

/// Clamped 8-bit RGB bytes of a 3-channel render.
std::vector<std::uint8_t> to_rgb8(const RenderedImage& image);

} // namespace semgs
