// semantic_net.hpp
//
// Small submanifold sparse convolutional network that predicts per-Gaussian
// embeddings from raw Gaussian attributes (opacity, base color, covariance).
// All arithmetic runs in double precision; checkpoints store f32.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "semgs/scene.hpp"

namespace semgs {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// opacity (1) + base color (3) + unique covariance entries (6).
inline constexpr int kVoxelFeatures = 10;
inline constexpr int kKernelVolume = 27;
inline constexpr double kDefaultVoxelSize = 0.05;

struct SparseGrid {
  double voxel_size = kDefaultVoxelSize;
  std::vector<Eigen::Vector3i> coords; // unique, lexicographically sorted (x, y, z)
  RowMatrixXd features;                // M x kVoxelFeatures
  std::vector<std::vector<std::uint32_t>> members;
  std::vector<std::uint32_t> voxel_of; // per Gaussian

  std::size_t size() const { return coords.size(); }
};

/// Bins Gaussians by floor(mu / voxel_size); voxel features are member means of
/// [opacity, base rgb, Sxx, Sxy, Sxz, Syy, Syz, Szz / voxel_size^2].
SparseGrid voxelize(const GaussianScene& scene, double voxel_size = kDefaultVoxelSize);

/// Per kernel offset, the (output voxel, input voxel) pairs whose coordinates differ by that offset.
struct KernelMap {
  std::array<std::vector<std::pair<std::uint32_t, std::uint32_t>>, kKernelVolume> pairs;

  static KernelMap build(std::span<const Eigen::Vector3i> coords);
  /// Offset (dx, dy, dz) in {-1, 0, 1}^3 of kernel slot k.
  static Eigen::Vector3i offset(int k);
};

struct NetArchitecture {
  int input_channels = kVoxelFeatures;
  std::vector<int> conv_widths{32, 64, 64};
  int output_channels = 16;
  double voxel_size = kDefaultVoxelSize;

  friend bool operator==(const NetArchitecture&, const NetArchitecture&) = default;
};

/// Sparse 3x3x3 conv + bias + ReLU layers followed by a 1x1x1 linear head.
///
/// Parameters live in one flat vector: for each conv layer 27 row-major
/// (in x out) kernels then the bias; then the head (in x out) and its bias.
class SparseConvNet {
public:
  SparseConvNet() = default;
  explicit SparseConvNet(NetArchitecture arch);

  /// He-style normal initialization from `seed`; biases start at zero.
  static SparseConvNet initialized(NetArchitecture arch, std::uint64_t seed);

  const NetArchitecture& architecture() const { return arch_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  std::size_t conv_kernel_offset(std::size_t layer, int k) const;
  std::size_t conv_bias_offset(std::size_t layer) const;
  std::size_t head_weight_offset() const;
  std::size_t head_bias_offset() const;

  /// M x C output embeddings, row order matching `grid.coords`.
  RowMatrixXd forward(const SparseGrid& grid) const;
  RowMatrixXd forward(const RowMatrixXd& features, const KernelMap& kmap) const;

  /// Mean cosine loss over masked rows and its gradient w.r.t. parameters().
  double loss_and_gradient(const RowMatrixXd& features, const KernelMap& kmap, const RowMatrixXd& targets,
                           const std::vector<std::uint8_t>& mask, std::vector<double>& gradient) const;

private:
  NetArchitecture arch_;
  std::vector<double> params_;
};

/// mean over masked rows of 1 - p.t / (max(|p|, 1e-8) |t|).
double cosine_loss(const RowMatrixXd& pred, const RowMatrixXd& target, const std::vector<std::uint8_t>& mask);

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct TrainingScene {
  const GaussianScene* scene = nullptr;
  const SemanticField* target = nullptr;
};

struct TrainResult {
  SparseConvNet net;
  std::vector<double> loss_trace; // mean loss per epoch
};

/// Full-grid SGD with momentum, one step per scene per epoch, scene order shuffled by `config.seed`.
/// Voxel targets are means of observed member rows; voxels without observed members are masked out.
TrainResult train(SparseConvNet net, const std::vector<TrainingScene>& dataset, const TrainConfig& config);

/// Copies each voxel's output to its member Gaussians; every count is 1.
SemanticField predict_field(const SparseConvNet& net, const GaussianScene& scene);

/// "SGNW" checkpoint; weights are rounded to f32.
void save_checkpoint(const SparseConvNet& net, const std::filesystem::path& path);
SparseConvNet load_checkpoint(const std::filesystem::path& path);
void write_loss_csv(const std::vector<double>& trace, const std::filesystem::path& path);

} // namespace semgs
