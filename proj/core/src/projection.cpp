#include "semgs/projection.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semgs/errors.hpp"
#include "semgs/parallel.hpp"

namespace semgs {

ViewMatch match_visible(const GaussianScene& scene, const Camera& cam, const DepthMap& depth,
                        const DepthTolerance& tolerance) {
  if (depth.width != cam.width || depth.height != cam.height)
    throw ContractError("match_visible: depth map size does not match the camera");
  if (!(tolerance.relative > 0.0) || !(tolerance.absolute > 0.0))
    throw ContractError("match_visible: tolerances must be positive");

  ViewMatch out;
  out.width = cam.width;
  out.height = cam.height;
  const Eigen::Matrix3d r = cam.rotation();
  const Eigen::Vector3d t = cam.translation();
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Eigen::Vector3d p = r * scene.gaussians[i].position.cast<double>() + t;
    const double z = p.z();
    if (!(z > 0.0)) continue;
    const double u = cam.fx * p.x() / z + cam.cx;
    const double v = cam.fy * p.y() / z + cam.cy;
    const double xf = std::floor(u), yf = std::floor(v);
    if (!(xf >= 0.0 && xf < cam.width && yf >= 0.0 && yf < cam.height)) continue;
    const int x = static_cast<int>(xf), y = static_cast<int>(yf);
    const float d = depth.at(y, x);
    if (d == DepthMap::kInvalid) continue;
    const double band = std::max(tolerance.absolute, tolerance.relative * static_cast<double>(d));
    if (std::abs(z - static_cast<double>(d)) > band) continue;
    out.pairs.push_back({static_cast<std::uint32_t>(i), x, y});
  }
  return out;
}

FusionAccumulator::FusionAccumulator(std::size_t gaussians, std::size_t channels)
    : sums_(decltype(sums_)::Zero(static_cast<Eigen::Index>(gaussians), static_cast<Eigen::Index>(channels))),
      counts_(gaussians, 0u) {}

FusionAccumulator& FusionAccumulator::accumulate(const FeatureMap& fmap, const ViewMatch& matches) {
  if (static_cast<std::size_t>(fmap.channels) != channels())
    throw ContractError("accumulate: feature map has " + std::to_string(fmap.channels) + " channels, accumulator " +
                        std::to_string(channels()));
  if (fmap.width != matches.width || fmap.height != matches.height)
    throw ContractError("accumulate: feature map size does not match the view");
  for (const PixelMatch& m : matches.pairs) {
    if (m.gaussian >= rows()) throw ContractError("accumulate: gaussian index out of range");
    const std::size_t p = fmap.index(m.y, m.x);
    if (!fmap.is_assigned(p)) continue;
    const auto px = fmap.pixel(p);
    auto row = sums_.row(m.gaussian);
    for (std::size_t k = 0; k < px.size(); ++k) row[static_cast<Eigen::Index>(k)] += static_cast<double>(px[k]);
    ++counts_[m.gaussian];
  }
  return *this;
}

FusionAccumulator& FusionAccumulator::merge(const FusionAccumulator& other) {
  if (other.rows() != rows() || other.channels() != channels()) throw ContractError("merge: accumulator shape mismatch");
  sums_ += other.sums_;
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

SemanticField finalize(const FusionAccumulator& acc) {
  SemanticField field(acc.rows(), acc.channels());
  field.counts = acc.counts();
  for (std::size_t i = 0; i < acc.rows(); ++i) {
    if (acc.counts()[i] == 0) continue;
    const auto row = static_cast<Eigen::Index>(i);
    field.embeddings.row(row) = (acc.sums().row(row) / static_cast<double>(acc.counts()[i])).cast<float>();
  }
  return field;
}

SemanticField project_scene(const GaussianScene& scene, const std::vector<View>& views, const ProjectionOptions& options) {
  if (views.empty()) throw ContractError("project_scene: at least one view is required");
  const int channels = views.front().features.channels;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& view = views[v];
    if (view.features.channels != channels)
      throw ContractError("project_scene: view " + std::to_string(v) + " has " + std::to_string(view.features.channels) +
                          " channels, expected " + std::to_string(channels));
    if (view.features.width != view.camera.width || view.features.height != view.camera.height)
      throw ContractError("project_scene: view " + std::to_string(v) + " feature map size does not match its camera");
  }

  // Matching is independent per view; fusion then runs in ascending view order.
  std::vector<ViewMatch> matches(views.size());
  const RenderOptions render_options{1, kDefaultZNear};
  parallel_for(views.size(), options.workers, [&](std::size_t v) {
    const DepthMap depth = render_depth(scene, views[v].camera, options.alpha_depth, render_options);
    matches[v] = match_visible(scene, views[v].camera, depth, options.tolerance);
  });

  FusionAccumulator acc(scene.size(), static_cast<std::size_t>(channels));
  for (std::size_t v = 0; v < views.size(); ++v) acc.accumulate(views[v].features, matches[v]);
  return finalize(acc);
}

} // namespace semgs
