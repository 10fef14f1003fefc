// projection.hpp
//
// Pixel <-> Gaussian correspondence through pinhole projection and a
// rendered-depth surface test, and average-pool fusion of per-view features
// into a per-Gaussian SemanticField.

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "semgs/feature_map.hpp"
#include "semgs/render.hpp"
#include "semgs/scene.hpp"

namespace semgs {

struct DepthTolerance {
  double relative = 0.05;
  double absolute = 0.01; // scene units
};

struct PixelMatch {
  std::uint32_t gaussian = 0;
  int x = 0;
  int y = 0;

  friend bool operator==(const PixelMatch&, const PixelMatch&) = default;
};

/// Gaussians of one view that lie on the rendered surface, in ascending Gaussian order.
struct ViewMatch {
  int width = 0;
  int height = 0;
  std::vector<PixelMatch> pairs;
};

/// Gaussian g matches pixel floor(K E mu) when it is in front of the camera, inside the image,
/// the depth there is valid and |z - depth| <= max(absolute, relative * depth).
ViewMatch match_visible(const GaussianScene& scene, const Camera& cam, const DepthMap& depth,
                        const DepthTolerance& tolerance = {});

/// Running (sum, count) realization of per-Gaussian average pooling.
class FusionAccumulator {
public:
  FusionAccumulator(std::size_t gaussians, std::size_t channels);

  std::size_t rows() const { return counts_.size(); }
  std::size_t channels() const { return static_cast<std::size_t>(sums_.cols()); }
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& sums() const { return sums_; }
  const std::vector<std::uint32_t>& counts() const { return counts_; }

  /// Adds fmap[u] to every matched Gaussian; unassigned pixels contribute nothing.
  FusionAccumulator& accumulate(const FeatureMap& fmap, const ViewMatch& matches);
  /// Element-wise sum of partial accumulators.
  FusionAccumulator& merge(const FusionAccumulator& other);

private:
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sums_;
  std::vector<std::uint32_t> counts_;
};

/// Mean embedding per observed Gaussian; unobserved rows stay zero.
SemanticField finalize(const FusionAccumulator& acc);

struct ProjectionOptions {
  float alpha_depth = kDefaultDepthAlpha;
  DepthTolerance tolerance;
  int workers = 1;
};

struct View {
  Camera camera;
  FeatureMap features;
};

/// Renders depth for every view, matches Gaussians and fuses features in ascending view order.
SemanticField project_scene(const GaussianScene& scene, const std::vector<View>& views,
                            const ProjectionOptions& options = {});

} // namespace semgs
