#include "semgs/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "semgs/errors.hpp"
#include "semgs/projection.hpp"
#include "semgs/render.hpp"

namespace semgs {

namespace {

constexpr float kShDc = 0.28209479177387814f;
constexpr float kObjectRadiusMin = 0.3f;
constexpr float kObjectRadiusMax = 0.45f;
constexpr float kObjectGap = 0.4f;

Eigen::Vector4f random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Eigen::Vector4f q(n(rng), n(rng), n(rng), n(rng));
  const float len = q.norm();
  return len > 0.0f ? Eigen::Vector4f(q / len) : Eigen::Vector4f(1.0f, 0.0f, 0.0f, 0.0f);
}

Eigen::Vector3f sample_in(const SyntheticObject& obj, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (;;) {
    const Eigen::Vector3f p(u(rng), u(rng), u(rng));
    if (obj.primitive == Primitive::box || p.squaredNorm() <= 1.0f) return obj.center + obj.radius * p;
  }
}

} // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void SyntheticSpec::validate() const {
  if (min_objects < 1 || max_objects < min_objects) throw ContractError("synthetic spec: need 1 <= min_objects <= max_objects");
  if (num_classes < max_objects) throw ContractError("synthetic spec: num_classes must be >= max_objects");
  if (channels < num_classes) throw ContractError("synthetic spec: channels must be >= num_classes");
  if (gaussians_per_object < 1) throw ContractError("synthetic spec: gaussians_per_object must be positive");
  if (views < 1 || width < 1 || height < 1) throw ContractError("synthetic spec: views and image size must be positive");
}

RowMatrixXf class_prototypes(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.prototype_seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd basis(spec.channels, spec.num_classes);
  for (Eigen::Index j = 0; j < basis.cols(); ++j)
    for (Eigen::Index i = 0; i < basis.rows(); ++i) basis(i, j) = n(rng);
  // Modified Gram-Schmidt, twice for numerical orthogonality.
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index j = 0; j < basis.cols(); ++j) {
      for (Eigen::Index i = 0; i < j; ++i) basis.col(j) -= basis.col(i).dot(basis.col(j)) * basis.col(i);
      basis.col(j).normalize();
    }
  }
  RowMatrixXf out = basis.transpose().cast<float>();
  for (Eigen::Index k = 0; k < out.rows(); ++k) out.row(k) /= out.row(k).norm();
  return out;
}

TextQuerySet prototype_queries(const SyntheticSpec& spec) {
  std::vector<std::string> labels;
  for (int k = 0; k < spec.num_classes; ++k) labels.push_back("class" + std::to_string(k));
  return make_queries(std::move(labels), class_prototypes(spec));
}

Eigen::Vector3f class_color(int class_id, int num_classes) {
  if (num_classes < 1 || class_id < 0 || class_id >= num_classes) throw ContractError("class_color: class out of range");
  // HSV hue wheel, alternating value so neighbouring hues stay separable.
  const float h = 6.0f * static_cast<float>(class_id) / static_cast<float>(num_classes);
  const float v = class_id % 2 == 0 ? 0.9f : 0.6f;
  const float s = 0.8f;
  const int sector = static_cast<int>(h) % 6;
  const float f = h - std::floor(h);
  const float p = v * (1.0f - s), q = v * (1.0f - s * f), t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
  case 0: return {v, t, p};
  case 1: return {q, v, p};
  case 2: return {p, v, t};
  case 3: return {p, q, v};
  case 4: return {t, p, v};
  default: return {v, p, q};
  }
}

SyntheticScene synth_scene(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  SyntheticScene out;

  const int count = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
  std::vector<int> classes(static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) classes[static_cast<std::size_t>(k)] = k;
  std::shuffle(classes.begin(), classes.end(), rng);

  // Rejection-sample non-overlapping objects; widen the area if packing gets stuck.
  float extent = 0.9f * std::sqrt(static_cast<float>(count));
  for (int i = 0; i < count; ++i) {
    SyntheticObject obj;
    obj.class_id = classes[static_cast<std::size_t>(i)];
    obj.primitive = unit(rng) < 0.5f ? Primitive::box : Primitive::sphere;
    obj.radius = kObjectRadiusMin + (kObjectRadiusMax - kObjectRadiusMin) * unit(rng);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 0 && attempt % 200 == 0) extent *= 1.2f;
      const Eigen::Vector3f c(extent * (2.0f * unit(rng) - 1.0f), extent * (2.0f * unit(rng) - 1.0f),
                              0.3f * (2.0f * unit(rng) - 1.0f));
      bool clear = true;
      for (const auto& other : out.objects) {
        // Boxes reach sqrt(3) r from the center.
        const float reach = std::sqrt(3.0f) * (obj.radius + other.radius);
        if ((c - other.center).norm() < reach + kObjectGap) {
          clear = false;
          break;
        }
      }
      if (clear) {
        obj.center = c;
        break;
      }
    }
    out.objects.push_back(obj);
  }

  std::normal_distribution<float> jitter(0.0f, 0.04f);
  for (std::size_t o = 0; o < out.objects.size(); ++o) {
    const auto& obj = out.objects[o];
    const Eigen::Vector3f base = class_color(obj.class_id, spec.num_classes);
    // Class-dependent footprint gives the 3D network a geometric cue besides color.
    const float class_scale = 0.06f + 0.01f * static_cast<float>(obj.class_id % 4);
    for (int g = 0; g < spec.gaussians_per_object; ++g) {
      Gaussian gs;
      gs.position = sample_in(obj, rng);
      gs.rotation = random_rotation(rng);
      for (int a = 0; a < 3; ++a) gs.scale[a] = class_scale * (0.8f + 0.4f * unit(rng));
      gs.opacity = 0.7f + 0.3f * unit(rng);
      Eigen::Vector3f rgb;
      for (int a = 0; a < 3; ++a) rgb[a] = std::clamp(base[a] + jitter(rng), 0.0f, 1.0f);
      gs.sh[0] = (rgb - Eigen::Vector3f::Constant(0.5f)) / kShDc;
      out.scene.gaussians.push_back(gs);
      out.labels.push_back(obj.class_id);
      out.object_of.push_back(static_cast<int>(o));
    }
  }
  out.scene.sh_degree = 0;

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& obj : out.objects) centroid += obj.center.cast<double>();
  centroid /= static_cast<double>(out.objects.size());
  double reach = 0.0;
  for (const auto& obj : out.objects)
    reach = std::max(reach, (obj.center.cast<double>() - centroid).norm() + std::sqrt(3.0) * obj.radius);

  const double distance = 2.0 * reach + 0.5;
  // Fit the bounding sphere into the shorter image side with a small margin.
  const double half_fov = std::asin(std::min(0.95, reach / distance)) * 1.1;
  const double focal = 0.5 * std::min(spec.width, spec.height) / std::tan(half_fov);
  for (int v = 0; v < spec.views; ++v) {
    const double azimuth = 2.0 * std::numbers::pi * (v + 0.5 * unit(rng)) / spec.views;
    const double elevation = (25.0 + 35.0 * unit(rng)) * std::numbers::pi / 180.0;
    const Eigen::Vector3d dir(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                              std::sin(elevation));
    out.cameras.push_back(look_at_camera(centroid + distance * dir, centroid, Eigen::Vector3d::UnitZ(), spec.width,
                                         spec.height, focal, focal));
  }
  out.scene.validate();
  return out;
}

std::vector<int> gt_label_map(const GaussianScene& scene, const std::vector<int>& labels, int num_classes,
                              const Camera& cam, int workers) {
  if (labels.size() != scene.size()) throw ContractError("gt_label_map: one label per Gaussian is required");
  RowMatrixXf onehot = RowMatrixXf::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ContractError("gt_label_map: label out of range");
    onehot(static_cast<Eigen::Index>(i), labels[i]) = 1.0f;
  }
  RenderOptions opts;
  opts.workers = workers;
  const auto image = render_confidence(scene, cam, onehot, opts);
  auto out = argmax_channels(image);
  for (std::size_t p = 0; p < out.size(); ++p)
    if (image.alpha[p] < kCoverageThreshold) out[p] = kUnknownLabel;
  return out;
}

FeatureMap synth_features(const std::vector<int>& gt_labels, const Camera& cam, const RowMatrixXf& prototypes,
                          const FeatureSynthesis& options) {
  const std::size_t pixels = static_cast<std::size_t>(cam.width) * cam.height;
  if (gt_labels.size() != pixels) throw ContractError("synth_features: label map does not match the camera size");
  if (!(options.sigma >= 0.0f)) throw ContractError("synth_features: sigma must be non-negative");
  const auto c = static_cast<int>(prototypes.cols());
  FeatureMap out(cam.height, cam.width, c);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  // per-component scale so the noise vector has RMS norm sigma
  const float scale = options.sigma / std::sqrt(static_cast<float>(c));
  Eigen::RowVectorXf value(c);
  for (std::size_t p = 0; p < pixels; ++p) {
    int label = gt_labels[p];
    if (label < 0) continue;
    if (label >= prototypes.rows()) throw ContractError("synth_features: label out of prototype range");
    if (!options.remap.empty()) {
      if (static_cast<std::size_t>(label) >= options.remap.size()) throw ContractError("synth_features: remap too short");
      label = options.remap[static_cast<std::size_t>(label)];
    }
    value = prototypes.row(label);
    if (options.sigma > 0.0f)
      for (int j = 0; j < c; ++j) value[j] += scale * noise(rng);
    const float n = value.norm();
    if (n > 0.0f) value /= n;
    out.set(p, std::span<const float>(value.data(), static_cast<std::size_t>(c)));
  }
  return out;
}

SyntheticScene fully_covered(const SyntheticScene& syn, const SyntheticSpec& spec, int workers) {
  const RowMatrixXf prototypes = class_prototypes(spec);
  SyntheticScene out = syn;
  out.scene.semantic2d.reset();
  out.scene.semantic3d.reset();
  ProjectionOptions options;
  options.workers = workers;
  for (;;) {
    std::vector<View> views;
    for (const Camera& cam : out.cameras)
      views.push_back({cam, synth_features(gt_label_map(out.scene, out.labels, spec.num_classes, cam, workers), cam,
                                           prototypes, {})});
    const SemanticField field = project_scene(out.scene, views, options);
    SyntheticScene next = out;
    next.scene.gaussians.clear();
    next.labels.clear();
    next.object_of.clear();
    for (std::size_t i = 0; i < field.rows(); ++i) {
      if (!field.observed(i)) continue;
      next.scene.gaussians.push_back(out.scene.gaussians[i]);
      next.labels.push_back(out.labels[i]);
      next.object_of.push_back(out.object_of[i]);
    }
    if (next.scene.size() == out.scene.size() || next.scene.size() == 0) return out;
    out = std::move(next);
  }
}

SegEvaluator::SegEvaluator(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw ContractError("SegEvaluator: need at least one class");
  confusion_.assign(static_cast<std::size_t>(k_), std::vector<std::uint64_t>(static_cast<std::size_t>(k_) + 1, 0));
}

void SegEvaluator::add(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw ContractError("SegEvaluator: prediction and ground truth differ in size");
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (gt[p] < 0) continue;
    if (gt[p] >= k_ || pred[p] >= k_) throw ContractError("SegEvaluator: label out of range");
    const int column = pred[p] < 0 ? k_ : pred[p];
    ++confusion_[static_cast<std::size_t>(gt[p])][static_cast<std::size_t>(column)];
  }
}

SegMetrics SegEvaluator::metrics() const {
  SegMetrics m;
  m.num_classes = k_;
  m.confusion = confusion_;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.iou.assign(static_cast<std::size_t>(k_), nan);
  m.accuracy.assign(static_cast<std::size_t>(k_), nan);
  double iou_sum = 0.0, acc_sum = 0.0;
  int present = 0;
  for (int k = 0; k < k_; ++k) {
    const auto& row = confusion_[static_cast<std::size_t>(k)];
    std::uint64_t gt_total = 0;
    for (auto v : row) gt_total += v;
    if (gt_total == 0) continue;
    const std::uint64_t tp = row[static_cast<std::size_t>(k)];
    std::uint64_t fp = 0;
    for (int g = 0; g < k_; ++g)
      if (g != k) fp += confusion_[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)];
    const double iou = static_cast<double>(tp) / static_cast<double>(gt_total + fp);
    const double acc = static_cast<double>(tp) / static_cast<double>(gt_total);
    m.iou[static_cast<std::size_t>(k)] = iou;
    m.accuracy[static_cast<std::size_t>(k)] = acc;
    iou_sum += iou;
    acc_sum += acc;
    ++present;
  }
  if (present > 0) {
    m.miou = iou_sum / present;
    m.macc = acc_sum / present;
  }
  return m;
}

SegMetrics miou(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes) {
  SegEvaluator e(num_classes);
  e.add(pred, gt);
  return e.metrics();
}

double loc_accuracy(const std::vector<std::array<int, 2>>& pixels, const std::vector<PixelBox>& boxes) {
  if (pixels.size() != boxes.size()) throw ContractError("loc_accuracy: one box per prediction is required");
  if (pixels.empty()) throw ContractError("loc_accuracy: no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pixels.size(); ++i)
    if (boxes[i].contains(pixels[i][0], pixels[i][1])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pixels.size());
}

PixelBox label_bbox(const std::vector<int>& labels, int width, int class_id) {
  if (width < 1) throw ContractError("label_bbox: width must be positive");
  PixelBox box{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] != class_id) continue;
    const int x = static_cast<int>(p % static_cast<std::size_t>(width));
    const int y = static_cast<int>(p / static_cast<std::size_t>(width));
    box.x0 = std::min(box.x0, x);
    box.y0 = std::min(box.y0, y);
    box.x1 = std::max(box.x1, x);
    box.y1 = std::max(box.y1, y);
  }
  if (box.x1 < 0) return PixelBox{};
  return box;
}

std::string format_metrics_table(const SegMetrics& m, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "class           IoU     Acc\n";
  for (int k = 0; k < m.num_classes; ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (std::isnan(m.iou[i])) continue;
    const std::string name = i < class_names.size() ? class_names[i] : std::to_string(k);
    os << std::left << std::setw(14) << name << std::right << std::setw(7) << m.iou[i] << std::setw(8) << m.accuracy[i]
       << "\n";
  }
  os << "mIoU " << m.miou << "  mAcc " << m.macc << "\n";
  return os.str();
}

} // namespace semgs
