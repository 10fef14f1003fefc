// scene.hpp
//
// Gaussian scene representation: activated per-Gaussian parameters, cameras
// and per-Gaussian semantic fields.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace semgs {

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kMaxShDegree = 3;
inline constexpr int kMaxShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// One 3D Gaussian with activated parameters.
///
/// `rotation` is a unit quaternion stored scalar-first as (w, x, y, z).
/// `sh[k]` holds the RGB coefficients of basis function k; only the first
/// sh_coeff_count(degree) entries are meaningful, the rest stay zero.
struct Gaussian {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  Eigen::Vector4f rotation{1.0f, 0.0f, 0.0f, 0.0f};
  Eigen::Vector3f scale = Eigen::Vector3f::Ones();
  float opacity = 1.0f;
  std::array<Eigen::Vector3f, kMaxShCoeffs> sh{};

  Gaussian() { sh.fill(Eigen::Vector3f::Zero()); }
};

/// Per-Gaussian embedding matrix with observation counts.
///
/// Rows with count 0 are exactly zero. When `normalized` is set every
/// observed row has unit L2 norm.
struct SemanticField {
  RowMatrixXf embeddings;
  std::vector<std::uint32_t> counts;
  bool normalized = false;

  SemanticField() = default;
  SemanticField(std::size_t rows, std::size_t channels)
      : embeddings(RowMatrixXf::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(channels))),
        counts(rows, 0u) {}

  std::size_t rows() const { return counts.size(); }
  std::size_t channels() const { return static_cast<std::size_t>(embeddings.cols()); }
  bool observed(std::size_t i) const { return counts[i] > 0; }

  /// Throws DataError if any invariant is broken.
  void validate() const;
};

struct GaussianScene {
  std::vector<Gaussian> gaussians;
  int sh_degree = 0;
  std::optional<SemanticField> semantic2d;
  std::optional<SemanticField> semantic3d;

  std::size_t size() const { return gaussians.size(); }

  /// Throws DataError naming the first offending Gaussian or field.
  void validate() const;
};

/// Pinhole camera with a rigid world-to-camera transform (row-major 4x4).
struct Camera {
  int width = 0;
  int height = 0;
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();

  Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation() * world + translation(); }
  /// Camera center in world coordinates.
  Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

  /// Throws DataError when intrinsics or the rotation block are invalid.
  void validate(double ortho_tol = 1e-5) const;
};

/// Builds a camera at `eye` looking at `target`; image y axis follows -up.
Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                      int width, int height, double fx, double fy);

// Stored (pre-activation) <-> activated parameter conventions.
float sigmoid(float logit);
float logit(float probability);

/// Rotation matrix of a (w, x, y, z) quaternion; the input is normalized first.
Eigen::Matrix3f rotation_matrix(const Eigen::Vector4f& q);

/// World-space covariance R S S^T R^T.
Eigen::Matrix3f covariance(const Gaussian& g);
Eigen::Matrix3d covariance_d(const Gaussian& g);

} // namespace semgs
