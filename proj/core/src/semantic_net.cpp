#include "semgs/semantic_net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>

#include "binary_io.hpp"
#include "semgs/errors.hpp"

namespace semgs {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kNormFloor = 1e-8;
constexpr double kShDc = 0.28209479177387814;

using ConstWeights = Eigen::Map<const RowMatrixXd>;
using Weights = Eigen::Map<RowMatrixXd>;

std::uint64_t pack_coord(const Eigen::Vector3i& c) {
  constexpr std::int64_t bias = 1 << 20;
  const auto part = [](int v) {
    const std::int64_t shifted = static_cast<std::int64_t>(v) + bias;
    if (shifted < 0 || shifted >= (std::int64_t{1} << 21)) throw DataError("voxel coordinate out of range");
    return static_cast<std::uint64_t>(shifted);
  };
  return (part(c.x()) << 42) | (part(c.y()) << 21) | part(c.z());
}

bool coord_less(const Eigen::Vector3i& a, const Eigen::Vector3i& b) {
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  return a.z() < b.z();
}

RowMatrixXd gather_rows(const RowMatrixXd& src, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
                        bool use_input) {
  RowMatrixXd out(static_cast<Eigen::Index>(pairs.size()), src.cols());
  for (std::size_t p = 0; p < pairs.size(); ++p)
    out.row(static_cast<Eigen::Index>(p)) = src.row(use_input ? pairs[p].second : pairs[p].first);
  return out;
}

RowMatrixXd conv_forward(const RowMatrixXd& x, const double* weights, const double* bias, int in, int out,
                         const KernelMap& kmap) {
  RowMatrixXd z(x.rows(), out);
  const Eigen::Map<const Eigen::RowVectorXd> b(bias, out);
  z.rowwise() = b;
  for (int k = 0; k < kKernelVolume; ++k) {
    const auto& pairs = kmap.pairs[static_cast<std::size_t>(k)];
    if (pairs.empty()) continue;
    const ConstWeights w(weights + static_cast<std::size_t>(k) * in * out, in, out);
    const RowMatrixXd y = gather_rows(x, pairs, true) * w;
    for (std::size_t p = 0; p < pairs.size(); ++p) z.row(pairs[p].first) += y.row(static_cast<Eigen::Index>(p));
  }
  return z;
}

struct ForwardCache {
  std::vector<RowMatrixXd> inputs;       // input of every conv layer, then of the head
  std::vector<RowMatrixXd> preactivation; // per conv layer
  RowMatrixXd output;
};

} // namespace

Eigen::Vector3i KernelMap::offset(int k) { return {k / 9 - 1, (k / 3) % 3 - 1, k % 3 - 1}; }

KernelMap KernelMap::build(std::span<const Eigen::Vector3i> coords) {
  std::unordered_map<std::uint64_t, std::uint32_t> index;
  index.reserve(coords.size() * 2);
  for (std::size_t i = 0; i < coords.size(); ++i) index.emplace(pack_coord(coords[i]), static_cast<std::uint32_t>(i));
  KernelMap map;
  for (int k = 0; k < kKernelVolume; ++k) {
    const Eigen::Vector3i off = offset(k);
    auto& pairs = map.pairs[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const auto it = index.find(pack_coord(coords[i] + off));
      if (it != index.end()) pairs.emplace_back(static_cast<std::uint32_t>(i), it->second);
    }
  }
  return map;
}

SparseGrid voxelize(const GaussianScene& scene, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ContractError("voxelize: voxel size must be positive");
  SparseGrid grid;
  grid.voxel_size = voxel_size;
  const std::size_t n = scene.size();
  grid.voxel_of.assign(n, 0);

  std::vector<std::pair<Eigen::Vector3i, std::uint32_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d mu = scene.gaussians[i].position.cast<double>();
    keyed[i] = {Eigen::Vector3i(static_cast<int>(std::floor(mu.x() / voxel_size)),
                                static_cast<int>(std::floor(mu.y() / voxel_size)),
                                static_cast<int>(std::floor(mu.z() / voxel_size))),
                static_cast<std::uint32_t>(i)};
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return coord_less(a.first, b.first);
    return a.second < b.second;
  });
  for (const auto& [coord, idx] : keyed) {
    if (grid.coords.empty() || grid.coords.back() != coord) {
      grid.coords.push_back(coord);
      grid.members.emplace_back();
    }
    grid.members.back().push_back(idx);
    grid.voxel_of[idx] = static_cast<std::uint32_t>(grid.coords.size() - 1);
  }

  const double cov_scale = 1.0 / (voxel_size * voxel_size);
  grid.features = RowMatrixXd::Zero(static_cast<Eigen::Index>(grid.coords.size()), kVoxelFeatures);
  for (std::size_t v = 0; v < grid.coords.size(); ++v) {
    Eigen::Matrix<double, 1, kVoxelFeatures> sum = Eigen::Matrix<double, 1, kVoxelFeatures>::Zero();
    for (std::uint32_t idx : grid.members[v]) {
      const Gaussian& g = scene.gaussians[idx];
      const Eigen::Matrix3d cov = covariance_d(g) * cov_scale;
      Eigen::Matrix<double, 1, kVoxelFeatures> f;
      f << g.opacity, kShDc * g.sh[0].x() + 0.5, kShDc * g.sh[0].y() + 0.5, kShDc * g.sh[0].z() + 0.5, cov(0, 0),
          cov(0, 1), cov(0, 2), cov(1, 1), cov(1, 2), cov(2, 2);
      sum += f;
    }
    grid.features.row(static_cast<Eigen::Index>(v)) = sum / static_cast<double>(grid.members[v].size());
  }
  return grid;
}

SparseConvNet::SparseConvNet(NetArchitecture arch) : arch_(std::move(arch)) {
  // checkpoints store the voxel size as f32; keep trained and reloaded nets on the same grid
  arch_.voxel_size = static_cast<double>(static_cast<float>(arch_.voxel_size));
  if (!(arch_.voxel_size > 0.0)) throw ContractError("SparseConvNet: voxel size must be positive");
  if (arch_.input_channels <= 0 || arch_.output_channels <= 0 || arch_.conv_widths.empty())
    throw ContractError("SparseConvNet: invalid architecture");
  std::size_t count = 0;
  int in = arch_.input_channels;
  for (int w : arch_.conv_widths) {
    if (w <= 0) throw ContractError("SparseConvNet: layer widths must be positive");
    count += static_cast<std::size_t>(kKernelVolume) * in * w + w;
    in = w;
  }
  count += static_cast<std::size_t>(in) * arch_.output_channels + arch_.output_channels;
  params_.assign(count, 0.0);
}

std::size_t SparseConvNet::conv_kernel_offset(std::size_t layer, int k) const {
  std::size_t off = 0;
  int in = arch_.input_channels;
  for (std::size_t l = 0; l < layer; ++l) {
    const int w = arch_.conv_widths[l];
    off += static_cast<std::size_t>(kKernelVolume) * in * w + w;
    in = w;
  }
  return off + static_cast<std::size_t>(k) * in * arch_.conv_widths[layer];
}

std::size_t SparseConvNet::conv_bias_offset(std::size_t layer) const { return conv_kernel_offset(layer, kKernelVolume); }

std::size_t SparseConvNet::head_weight_offset() const {
  const std::size_t last = arch_.conv_widths.size() - 1;
  return conv_bias_offset(last) + static_cast<std::size_t>(arch_.conv_widths[last]);
}

std::size_t SparseConvNet::head_bias_offset() const {
  return head_weight_offset() + static_cast<std::size_t>(arch_.conv_widths.back()) * arch_.output_channels;
}

SparseConvNet SparseConvNet::initialized(NetArchitecture arch, std::uint64_t seed) {
  SparseConvNet net(std::move(arch));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  int in = net.arch_.input_channels;
  for (std::size_t l = 0; l < net.arch_.conv_widths.size(); ++l) {
    const int out = net.arch_.conv_widths[l];
    // Typical occupancy is well below 27 neighbours; scale for roughly 8 active taps.
    const double stddev = std::sqrt(2.0 / (8.0 * in));
    const std::size_t begin = net.conv_kernel_offset(l, 0);
    const std::size_t end = net.conv_bias_offset(l);
    for (std::size_t i = begin; i < end; ++i) net.params_[i] = stddev * normal(rng);
    in = out;
  }
  const double head_std = std::sqrt(1.0 / in);
  for (std::size_t i = net.head_weight_offset(); i < net.head_bias_offset(); ++i) net.params_[i] = head_std * normal(rng);
  return net;
}

RowMatrixXd SparseConvNet::forward(const SparseGrid& grid) const {
  return forward(grid.features, KernelMap::build(grid.coords));
}

RowMatrixXd SparseConvNet::forward(const RowMatrixXd& features, const KernelMap& kmap) const {
  if (features.cols() != arch_.input_channels)
    throw ContractError("forward: grid has " + std::to_string(features.cols()) + " input features, network expects " +
                        std::to_string(arch_.input_channels));
  RowMatrixXd x = features;
  int in = arch_.input_channels;
  for (std::size_t l = 0; l < arch_.conv_widths.size(); ++l) {
    const int out = arch_.conv_widths[l];
    x = conv_forward(x, params_.data() + conv_kernel_offset(l, 0), params_.data() + conv_bias_offset(l), in, out, kmap)
            .cwiseMax(0.0);
    in = out;
  }
  const ConstWeights head(params_.data() + head_weight_offset(), in, arch_.output_channels);
  const Eigen::Map<const Eigen::RowVectorXd> bias(params_.data() + head_bias_offset(), arch_.output_channels);
  RowMatrixXd y = x * head;
  y.rowwise() += bias;
  return y;
}

double cosine_loss(const RowMatrixXd& pred, const RowMatrixXd& target, const std::vector<std::uint8_t>& mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
      mask.size() != static_cast<std::size_t>(pred.rows()))
    throw ContractError("cosine_loss: shape mismatch");
  double total = 0.0;
  std::size_t rows = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const double tn = target.row(i).norm();
    if (!(tn >= kNormFloor)) throw ContractError("cosine_loss: masked target row " + std::to_string(i) + " is zero");
    const double pn = std::max(pred.row(i).norm(), kNormFloor);
    total += 1.0 - pred.row(i).dot(target.row(i)) / (pn * tn);
    ++rows;
  }
  if (rows == 0) throw ContractError("cosine_loss: no masked rows");
  return total / static_cast<double>(rows);
}

double SparseConvNet::loss_and_gradient(const RowMatrixXd& features, const KernelMap& kmap, const RowMatrixXd& targets,
                                        const std::vector<std::uint8_t>& mask, std::vector<double>& gradient) const {
  if (features.cols() != arch_.input_channels) throw ContractError("loss_and_gradient: input width mismatch");
  gradient.assign(params_.size(), 0.0);

  // forward with cache
  ForwardCache cache;
  RowMatrixXd x = features;
  int in = arch_.input_channels;
  for (std::size_t l = 0; l < arch_.conv_widths.size(); ++l) {
    const int out = arch_.conv_widths[l];
    cache.inputs.push_back(x);
    cache.preactivation.push_back(
        conv_forward(x, params_.data() + conv_kernel_offset(l, 0), params_.data() + conv_bias_offset(l), in, out, kmap));
    x = cache.preactivation.back().cwiseMax(0.0);
    in = out;
  }
  cache.inputs.push_back(x);
  const ConstWeights head(params_.data() + head_weight_offset(), in, arch_.output_channels);
  cache.output = x * head;
  cache.output.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params_.data() + head_bias_offset(), arch_.output_channels);

  const double loss = cosine_loss(cache.output, targets, mask);
  const auto masked = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));

  RowMatrixXd d_out = RowMatrixXd::Zero(cache.output.rows(), cache.output.cols());
  for (Eigen::Index i = 0; i < d_out.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const auto p = cache.output.row(i);
    const auto t = targets.row(i);
    const double tn = t.norm();
    const double raw_pn = p.norm();
    if (raw_pn > kNormFloor) {
      const double dot = p.dot(t);
      d_out.row(i) = -(t / (raw_pn * tn) - dot * p / (raw_pn * raw_pn * raw_pn * tn)) / masked;
    } else {
      d_out.row(i) = -t / (kNormFloor * tn) / masked;
    }
  }

  // head
  {
    Weights dw(gradient.data() + head_weight_offset(), in, arch_.output_channels);
    dw = cache.inputs.back().transpose() * d_out;
    Eigen::Map<Eigen::RowVectorXd>(gradient.data() + head_bias_offset(), arch_.output_channels) = d_out.colwise().sum();
  }
  RowMatrixXd d_x = d_out * head.transpose();

  for (std::size_t l = arch_.conv_widths.size(); l-- > 0;) {
    const int out = arch_.conv_widths[l];
    const int layer_in = l == 0 ? arch_.input_channels : arch_.conv_widths[l - 1];
    const RowMatrixXd d_z = (cache.preactivation[l].array() > 0.0).select(d_x, 0.0);
    Eigen::Map<Eigen::RowVectorXd>(gradient.data() + conv_bias_offset(l), out) = d_z.colwise().sum();

    const RowMatrixXd& x_in = cache.inputs[l];
    RowMatrixXd d_in = RowMatrixXd::Zero(x_in.rows(), layer_in);
    for (int k = 0; k < kKernelVolume; ++k) {
      const auto& pairs = kmap.pairs[static_cast<std::size_t>(k)];
      if (pairs.empty()) continue;
      const std::size_t off = conv_kernel_offset(l, k);
      const RowMatrixXd xg = gather_rows(x_in, pairs, true);
      const RowMatrixXd dzg = gather_rows(d_z, pairs, false);
      Weights(gradient.data() + off, layer_in, out) = xg.transpose() * dzg;
      if (l > 0) {
        const RowMatrixXd dxg = dzg * ConstWeights(params_.data() + off, layer_in, out).transpose();
        for (std::size_t p = 0; p < pairs.size(); ++p) d_in.row(pairs[p].second) += dxg.row(static_cast<Eigen::Index>(p));
      }
    }
    d_x = std::move(d_in);
  }
  return loss;
}

namespace {

struct PreparedScene {
  RowMatrixXd features;
  KernelMap kmap;
  RowMatrixXd targets;
  std::vector<std::uint8_t> mask;
};

PreparedScene prepare(const TrainingScene& sample, const NetArchitecture& arch, std::size_t index) {
  if (sample.scene == nullptr || sample.target == nullptr) throw ContractError("train: null dataset entry");
  const GaussianScene& scene = *sample.scene;
  const SemanticField& field = *sample.target;
  const std::string where = "train: dataset entry " + std::to_string(index);
  if (field.rows() != scene.size())
    throw ContractError(where + ": field has " + std::to_string(field.rows()) + " rows for " +
                        std::to_string(scene.size()) + " gaussians");
  if (field.channels() != static_cast<std::size_t>(arch.output_channels))
    throw ContractError(where + ": field width " + std::to_string(field.channels()) + " != network output " +
                        std::to_string(arch.output_channels));

  const SparseGrid grid = voxelize(scene, arch.voxel_size);
  PreparedScene prep;
  prep.features = grid.features;
  prep.kmap = KernelMap::build(grid.coords);
  prep.targets = RowMatrixXd::Zero(static_cast<Eigen::Index>(grid.size()), arch.output_channels);
  prep.mask.assign(grid.size(), 0);
  for (std::size_t v = 0; v < grid.size(); ++v) {
    std::size_t observed = 0;
    for (std::uint32_t g : grid.members[v]) {
      if (!field.observed(g)) continue;
      prep.targets.row(static_cast<Eigen::Index>(v)) += field.embeddings.row(g).cast<double>();
      ++observed;
    }
    if (observed == 0) continue;
    prep.targets.row(static_cast<Eigen::Index>(v)) /= static_cast<double>(observed);
    if (prep.targets.row(static_cast<Eigen::Index>(v)).norm() >= kNormFloor) prep.mask[v] = 1;
  }
  return prep;
}

} // namespace

TrainResult train(SparseConvNet net, const std::vector<TrainingScene>& dataset, const TrainConfig& config) {
  if (config.epochs < 0 || config.learning_rate < 0.0) throw ContractError("train: invalid configuration");
  std::vector<PreparedScene> prepared;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    PreparedScene p = prepare(dataset[i], net.architecture(), i);
    if (std::any_of(p.mask.begin(), p.mask.end(), [](std::uint8_t m) { return m != 0; })) prepared.push_back(std::move(p));
  }
  if (prepared.empty()) throw ContractError("train: no observed voxels in the dataset");

  TrainResult result;
  std::vector<double> velocity(net.parameters().size(), 0.0);
  std::vector<double> gradient;
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t s : order) {
      const PreparedScene& p = prepared[s];
      epoch_loss += net.loss_and_gradient(p.features, p.kmap, p.targets, p.mask, gradient);
      auto& params = net.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = config.momentum * velocity[i] + gradient[i];
        params[i] -= config.learning_rate * velocity[i];
      }
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(prepared.size()));
  }
  result.net = std::move(net);
  return result;
}

SemanticField predict_field(const SparseConvNet& net, const GaussianScene& scene) {
  const SparseGrid grid = voxelize(scene, net.architecture().voxel_size);
  SemanticField field(scene.size(), static_cast<std::size_t>(net.architecture().output_channels));
  if (scene.size() == 0) return field;
  const RowMatrixXd out = net.forward(grid);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    field.embeddings.row(static_cast<Eigen::Index>(i)) = out.row(grid.voxel_of[i]).cast<float>();
    field.counts[i] = 1;
  }
  return field;
}

void save_checkpoint(const SparseConvNet& net, const std::filesystem::path& path) {
  const NetArchitecture& a = net.architecture();
  detail::ByteWriter w;
  w.write_bytes("SGNW");
  w.write(kCheckpointVersion);
  w.write(static_cast<std::uint32_t>(a.conv_widths.size()));
  w.write(static_cast<std::uint32_t>(a.input_channels));
  for (int width : a.conv_widths) w.write(static_cast<std::uint32_t>(width));
  w.write(static_cast<std::uint32_t>(a.output_channels));
  w.write(static_cast<float>(a.voxel_size));
  for (double p : net.parameters()) w.write(static_cast<float>(p));
  w.save(path);
}

SparseConvNet load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path.string());
  if (r.read_magic(4) != "SGNW") throw FormatError(path.string() + ": bad magic (expected SGNW)");
  const auto version = r.read<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  NetArchitecture arch;
  const auto layers = r.read<std::uint32_t>("layer count");
  if (layers == 0 || layers > 64) throw FormatError(path.string() + ": implausible layer count " + std::to_string(layers));
  arch.input_channels = static_cast<int>(r.read<std::uint32_t>("input width"));
  arch.conv_widths.clear();
  for (std::uint32_t l = 0; l < layers; ++l) arch.conv_widths.push_back(static_cast<int>(r.read<std::uint32_t>("layer width")));
  arch.output_channels = static_cast<int>(r.read<std::uint32_t>("output width"));
  arch.voxel_size = static_cast<double>(r.read<float>("voxel size"));
  SparseConvNet net(arch);
  std::vector<float> raw(net.parameters().size());
  r.read_array(std::span<float>(raw), "weights");
  r.expect_end();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) throw DataError(path.string() + ": non-finite weight " + std::to_string(i));
    net.parameters()[i] = raw[i];
  }
  return net;
}

void write_loss_csv(const std::vector<double>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,loss\n";
  out.precision(17);
  for (std::size_t e = 0; e < trace.size(); ++e) out << e << "," << trace[e] << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

} // namespace semgs
