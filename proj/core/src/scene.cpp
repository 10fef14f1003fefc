#include "semgs/scene.hpp"

#include <cmath>
#include <string>

#include "semgs/errors.hpp"

namespace semgs {

namespace {

bool finite3(const Eigen::Vector3f& v) { return v.allFinite(); }

} // namespace

float sigmoid(float x) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); }

float logit(float p) {
  const double pd = static_cast<double>(p);
  return static_cast<float>(std::log(pd / (1.0 - pd)));
}

Eigen::Matrix3f rotation_matrix(const Eigen::Vector4f& q_in) {
  const Eigen::Vector4f q = q_in.normalized();
  const float w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3f r;
  r << 1.f - 2.f * (y * y + z * z), 2.f * (x * y - w * z), 2.f * (x * z + w * y),
      2.f * (x * y + w * z), 1.f - 2.f * (x * x + z * z), 2.f * (y * z - w * x),
      2.f * (x * z - w * y), 2.f * (y * z + w * x), 1.f - 2.f * (x * x + y * y);
  return r;
}

Eigen::Matrix3d covariance_d(const Gaussian& g) {
  const Eigen::Vector4d q = g.rotation.cast<double>().normalized();
  const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
  const Eigen::Matrix3d r = quat.toRotationMatrix();
  const Eigen::Matrix3d m = r * g.scale.cast<double>().asDiagonal();
  Eigen::Matrix3d sigma = m * m.transpose();
  // exact symmetry
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  return sigma;
}

Eigen::Matrix3f covariance(const Gaussian& g) { return covariance_d(g).cast<float>(); }

void SemanticField::validate() const {
  if (static_cast<std::size_t>(embeddings.rows()) != counts.size()) {
    throw DataError("semantic field: " + std::to_string(embeddings.rows()) + " embedding rows but " +
                    std::to_string(counts.size()) + " counts");
  }
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    const auto row = embeddings.row(i);
    if (!row.allFinite()) throw DataError("semantic field: non-finite value in row " + std::to_string(i));
    if (counts[static_cast<std::size_t>(i)] == 0) {
      if ((row.array() != 0.0f).any())
        throw DataError("semantic field: unobserved row " + std::to_string(i) + " is not zero");
    } else if (normalized && std::abs(row.norm() - 1.0f) > 1e-5f) {
      throw DataError("semantic field: row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

void GaussianScene::validate() const {
  if (sh_degree < 0 || sh_degree > kMaxShDegree) throw DataError("scene: unsupported SH degree " + std::to_string(sh_degree));
  const int coeffs = sh_coeff_count(sh_degree);
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const Gaussian& g = gaussians[i];
    const std::string where = "gaussian " + std::to_string(i);
    if (!finite3(g.position) || !g.rotation.allFinite() || !finite3(g.scale) || !std::isfinite(g.opacity))
      throw DataError(where + ": non-finite parameter");
    if (std::abs(g.rotation.cast<double>().norm() - 1.0) > 1e-6) throw DataError(where + ": rotation is not unit");
    if ((g.scale.array() <= 0.0f).any()) throw DataError(where + ": scale must be positive");
    if (g.opacity < 0.0f || g.opacity > 1.0f) throw DataError(where + ": opacity outside [0,1]");
    for (int k = 0; k < coeffs; ++k)
      if (!finite3(g.sh[static_cast<std::size_t>(k)])) throw DataError(where + ": non-finite SH coefficient");
  }
  for (const auto* field : {&semantic2d, &semantic3d}) {
    if (!field->has_value()) continue;
    if ((*field)->rows() != gaussians.size()) {
      throw DataError("scene: semantic field has " + std::to_string((*field)->rows()) + " rows for " +
                      std::to_string(gaussians.size()) + " gaussians");
    }
    (*field)->validate();
  }
}

void Camera::validate(double ortho_tol) const {
  if (width <= 0 || height <= 0) throw DataError("camera: image size must be positive");
  if (!(fx > 0.0) || !(fy > 0.0)) throw DataError("camera: focal lengths must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
    throw DataError("camera: principal point outside the image");
  if (!world_to_camera.allFinite()) throw DataError("camera: non-finite extrinsics");
  const Eigen::Matrix3d r = rotation();
  const double err = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (err > ortho_tol) throw DataError("camera: rotation block is not orthonormal");
  if (world_to_camera.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) throw DataError("camera: bottom row must be (0,0,0,1)");
}

Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up, int width,
                      int height, double fx, double fy) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Eigen::Vector3d::UnitX());
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);

  Eigen::Matrix3d r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();

  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.world_to_camera.setIdentity();
  cam.world_to_camera.topLeftCorner<3, 3>() = r;
  cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
  return cam;
}

} // namespace semgs
