#include "semgs/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semgs/errors.hpp"
#include "semgs/parallel.hpp"

namespace semgs {

namespace {

constexpr float kShC0 = 0.28209479177387814f;
constexpr float kShC1 = 0.4886025119029199f;
constexpr float kShC2[] = {1.0925484305920792f, -1.0925484305920792f, 0.31539156525252005f, -1.0925484305920792f,
                           0.5462742152960396f};
constexpr float kShC3[] = {-0.5900435899266435f, 2.890611442640554f, -0.4570457994644658f, 0.3731763325901154f,
                           -0.4570457994644658f, 1.445305721320277f, -0.5900435899266435f};

} // namespace

std::optional<Splat2D> project_gaussian(const Gaussian& g, const Camera& cam, float z_near) {
  const Eigen::Vector3d t = cam.to_camera(g.position.cast<double>());
  const double z = t.z();
  if (!(z > static_cast<double>(z_near))) return std::nullopt;

  const double u = cam.fx * t.x() / z + cam.cx;
  const double v = cam.fy * t.y() / z + cam.cy;

  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx / z, 0.0, -cam.fx * t.x() / (z * z), 0.0, cam.fy / z, -cam.fy * t.y() / (z * z);
  const Eigen::Matrix3d w = cam.rotation();
  const Eigen::Matrix3d sigma_cam = w * covariance_d(g) * w.transpose();
  Eigen::Matrix2d cov = jac * sigma_cam * jac.transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += kLowPassVariance;
  cov(1, 1) += kLowPassVariance;

  const double det = cov.determinant();
  if (!(det > 0.0) || !std::isfinite(u) || !std::isfinite(v)) return std::nullopt;

  const double rx = std::sqrt(static_cast<double>(kFootprintMahalanobisSq) * cov(0, 0));
  const double ry = std::sqrt(static_cast<double>(kFootprintMahalanobisSq) * cov(1, 1));
  // Pixel centers sit at +0.5; one extra pixel of margin keeps the bounds conservative under rounding.
  const double x_lo = std::ceil(u - rx - 0.5) - 1.0;
  const double x_hi = std::floor(u + rx - 0.5) + 1.0;
  const double y_lo = std::ceil(v - ry - 0.5) - 1.0;
  const double y_hi = std::floor(v + ry - 0.5) + 1.0;
  if (x_hi < 0.0 || y_hi < 0.0 || x_lo > cam.width - 1.0 || y_lo > cam.height - 1.0) return std::nullopt;

  Splat2D s;
  s.mean = {static_cast<float>(u), static_cast<float>(v)};
  s.cov = cov.cast<float>();
  s.conic = Eigen::Vector3d(cov(1, 1) / det, -cov(0, 1) / det, cov(0, 0) / det).cast<float>();
  s.depth = static_cast<float>(z);
  s.opacity = g.opacity;
  s.x_min = static_cast<int>(std::max(0.0, x_lo));
  s.y_min = static_cast<int>(std::max(0.0, y_lo));
  s.x_max = static_cast<int>(std::min(cam.width - 1.0, x_hi));
  s.y_max = static_cast<int>(std::min(cam.height - 1.0, y_hi));
  return s;
}

float splat_alpha(const Splat2D& s, int x, int y) {
  const float dx = static_cast<float>(x) + 0.5f - s.mean.x();
  const float dy = static_cast<float>(y) + 0.5f - s.mean.y();
  const float m = s.conic.x() * dx * dx + 2.0f * s.conic.y() * dx * dy + s.conic.z() * dy * dy;
  if (!(m <= kFootprintMahalanobisSq)) return 0.0f;
  return std::min(kAlphaCap, s.opacity * std::exp(-0.5f * m));
}

Eigen::Vector3f eval_sh(std::span<const Eigen::Vector3f> sh, int degree, const Eigen::Vector3f& dir) {
  Eigen::Vector3f rgb = kShC0 * sh[0];
  if (degree > 0) {
    const float x = dir.x(), y = dir.y(), z = dir.z();
    rgb += -kShC1 * y * sh[1] + kShC1 * z * sh[2] - kShC1 * x * sh[3];
    if (degree > 1) {
      const float xx = x * x, yy = y * y, zz = z * z, xy = x * y, yz = y * z, xz = x * z;
      rgb += kShC2[0] * xy * sh[4] + kShC2[1] * yz * sh[5] + kShC2[2] * (2.0f * zz - xx - yy) * sh[6] +
             kShC2[3] * xz * sh[7] + kShC2[4] * (xx - yy) * sh[8];
      if (degree > 2) {
        rgb += kShC3[0] * y * (3.0f * xx - yy) * sh[9] + kShC3[1] * xy * z * sh[10] +
               kShC3[2] * y * (4.0f * zz - xx - yy) * sh[11] + kShC3[3] * z * (2.0f * zz - 3.0f * xx - 3.0f * yy) * sh[12] +
               kShC3[4] * x * (4.0f * zz - xx - yy) * sh[13] + kShC3[5] * z * (xx - yy) * sh[14] +
               kShC3[6] * x * (xx - 3.0f * yy) * sh[15];
      }
    }
  }
  rgb.array() += 0.5f;
  return rgb.cwiseMax(0.0f).cwiseMin(1.0f);
}

Rasterization::Rasterization(const GaussianScene& scene, const Camera& cam, const RenderOptions& options)
    : width_(cam.width), height_(cam.height) {
  tiles_x_ = (width_ + kTileSize - 1) / kTileSize;
  tiles_y_ = (height_ + kTileSize - 1) / kTileSize;
  tiles_.resize(static_cast<std::size_t>(tiles_x_) * static_cast<std::size_t>(tiles_y_));

  const std::size_t n = scene.size();
  splats_.resize(n);
  parallel_for(n, options.workers,
               [&](std::size_t i) { splats_[i] = project_gaussian(scene.gaussians[i], cam, options.z_near); });

  std::vector<std::uint32_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (splats_[i]) order.push_back(static_cast<std::uint32_t>(i));
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const float da = splats_[a]->depth, db = splats_[b]->depth;
    return da < db || (da == db && a < b);
  });

  for (std::uint32_t idx : order) {
    const Splat2D& s = *splats_[idx];
    for (int ty = s.y_min / kTileSize; ty <= s.y_max / kTileSize; ++ty)
      for (int tx = s.x_min / kTileSize; tx <= s.x_max / kTileSize; ++tx)
        tiles_[static_cast<std::size_t>(ty) * tiles_x_ + tx].push_back(idx);
  }
}

RenderedImage Rasterization::blend(const RowMatrixXf& features, std::span<const float> background, int workers) const {
  if (static_cast<std::size_t>(features.rows()) != splats_.size())
    throw ContractError("render: feature rows (" + std::to_string(features.rows()) + ") != gaussian count (" +
                        std::to_string(splats_.size()) + ")");
  const int k = static_cast<int>(features.cols());
  if (!background.empty() && background.size() != static_cast<std::size_t>(k))
    throw ContractError("render: background has wrong channel count");

  RenderedImage img;
  img.height = height_;
  img.width = width_;
  img.channels = k;
  img.values.assign(static_cast<std::size_t>(height_) * width_ * k, 0.0f);
  img.alpha.assign(static_cast<std::size_t>(height_) * width_, 0.0f);

  parallel_for(tiles_.size(), workers, [&](std::size_t t) {
    const auto& list = tiles_[t];
    const int tx = static_cast<int>(t % tiles_x_), ty = static_cast<int>(t / tiles_x_);
    const int x_end = std::min(width_, (tx + 1) * kTileSize), y_end = std::min(height_, (ty + 1) * kTileSize);
    std::vector<float> acc(static_cast<std::size_t>(k));
    for (int y = ty * kTileSize; y < y_end; ++y) {
      for (int x = tx * kTileSize; x < x_end; ++x) {
        std::fill(acc.begin(), acc.end(), 0.0f);
        float transmittance = 1.0f;
        for (std::uint32_t idx : list) {
          const float a = splat_alpha(*splats_[idx], x, y);
          if (a < kAlphaSkip) continue;
          const float weight = a * transmittance;
          const float* row = features.data() + static_cast<std::size_t>(idx) * k;
          for (int c = 0; c < k; ++c) acc[static_cast<std::size_t>(c)] += row[c] * weight;
          transmittance *= 1.0f - a;
          if (transmittance < kTransmittanceStop) break;
        }
        const std::size_t p = static_cast<std::size_t>(y) * width_ + x;
        float* out = img.values.data() + p * k;
        for (int c = 0; c < k; ++c)
          out[c] = acc[static_cast<std::size_t>(c)] +
                   (background.empty() ? 0.0f : transmittance * background[static_cast<std::size_t>(c)]);
        img.alpha[p] = 1.0f - transmittance;
      }
    }
  });
  return img;
}

DepthMap Rasterization::depth(float alpha_threshold, int workers) const {
  if (!(alpha_threshold > 0.0f && alpha_threshold < 1.0f))
    throw ContractError("render_depth: alpha threshold must lie in (0, 1)");
  DepthMap map;
  map.height = height_;
  map.width = width_;
  map.depth.assign(static_cast<std::size_t>(height_) * width_, DepthMap::kInvalid);

  parallel_for(tiles_.size(), workers, [&](std::size_t t) {
    const auto& list = tiles_[t];
    const int tx = static_cast<int>(t % tiles_x_), ty = static_cast<int>(t / tiles_x_);
    const int x_end = std::min(width_, (tx + 1) * kTileSize), y_end = std::min(height_, (ty + 1) * kTileSize);
    for (int y = ty * kTileSize; y < y_end; ++y) {
      for (int x = tx * kTileSize; x < x_end; ++x) {
        float transmittance = 1.0f;
        float accumulated = 0.0f;
        for (std::uint32_t idx : list) {
          const Splat2D& s = *splats_[idx];
          const float a = splat_alpha(s, x, y);
          if (a < kAlphaSkip) continue;
          accumulated += a * transmittance;
          transmittance *= 1.0f - a;
          if (accumulated >= alpha_threshold) {
            map.depth[static_cast<std::size_t>(y) * width_ + x] = s.depth;
            break;
          }
          if (transmittance < kTransmittanceStop) break;
        }
      }
    }
  });
  return map;
}

RowMatrixXf view_colors(const GaussianScene& scene, const Camera& cam) {
  const Eigen::Vector3f center = cam.center().cast<float>();
  RowMatrixXf colors(static_cast<Eigen::Index>(scene.size()), 3);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Gaussian& g = scene.gaussians[i];
    Eigen::Vector3f dir = g.position - center;
    const float len = dir.norm();
    dir = len > 0.0f ? Eigen::Vector3f(dir / len) : Eigen::Vector3f::UnitZ();
    colors.row(static_cast<Eigen::Index>(i)) = eval_sh(g.sh, scene.sh_degree, dir).transpose();
  }
  return colors;
}

RenderedImage render_rgb(const GaussianScene& scene, const Camera& cam, const Eigen::Vector3f& background,
                         const RenderOptions& options) {
  const Rasterization raster(scene, cam, options);
  const float bg[3] = {background.x(), background.y(), background.z()};
  return raster.blend(view_colors(scene, cam), bg, options.workers);
}

DepthMap render_depth(const GaussianScene& scene, const Camera& cam, float alpha_threshold, const RenderOptions& options) {
  if (!(alpha_threshold > 0.0f && alpha_threshold < 1.0f))
    throw ContractError("render_depth: alpha threshold must lie in (0, 1)");
  return Rasterization(scene, cam, options).depth(alpha_threshold, options.workers);
}

RenderedImage render_confidence(const GaussianScene& scene, const Camera& cam, const RowMatrixXf& confidences,
                                const RenderOptions& options) {
  if (static_cast<std::size_t>(confidences.rows()) != scene.size())
    throw ContractError("render_confidence: " + std::to_string(confidences.rows()) + " confidence rows for " +
                        std::to_string(scene.size()) + " gaussians");
  return Rasterization(scene, cam, options).blend(confidences, {}, options.workers);
}

std::vector<int> argmax_channels(const RenderedImage& image) {
  std::vector<int> labels(static_cast<std::size_t>(image.height) * image.width, 0);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto px = image.pixel(p);
    labels[p] = static_cast<int>(std::max_element(px.begin(), px.end()) - px.begin());
  }
  return labels;
}

std::vector<std::uint8_t> to_rgb8(const RenderedImage& image) {
  if (image.channels != 3) throw ContractError("to_rgb8: image must have 3 channels");
  std::vector<std::uint8_t> out(image.values.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.values[i], 0.0f, 1.0f) * 255.0f));
  return out;
}

} // namespace semgs
