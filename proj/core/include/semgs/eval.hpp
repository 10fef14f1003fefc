// eval.hpp
//
// Labeled synthetic scenes with oracle feature maps, and segmentation /
// localization metrics.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "semgs/feature_map.hpp"
#include "semgs/query.hpp"
#include "semgs/scene.hpp"

namespace semgs {

enum class Primitive { box, sphere };

struct SyntheticSpec {
  int min_objects = 3;
  int max_objects = 8;
  int gaussians_per_object = 200;
  int num_classes = 16;  // K
  int channels = 16;     // C, must be >= K
  int views = 20;
  int width = 128;
  int height = 96;
  /// Prototypes and class colors depend only on this seed, so scenes share a label space.
  std::uint64_t prototype_seed = 7;

  void validate() const;
};

struct SyntheticObject {
  int class_id = 0;
  Primitive primitive = Primitive::box;
  Eigen::Vector3f center = Eigen::Vector3f::Zero();
  float radius = 0.0f; // half-extent of the box or sphere radius
};

struct SyntheticScene {
  GaussianScene scene;
  std::vector<int> labels;    // class per Gaussian
  std::vector<int> object_of; // object index per Gaussian
  std::vector<SyntheticObject> objects;
  std::vector<Camera> cameras;
};

/// Independent sub-seed for stream `stream` of a run seeded with `seed` (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// K x C prototypes: orthonormalized random vectors (pairwise cosine ~0).
RowMatrixXf class_prototypes(const SyntheticSpec& spec);
TextQuerySet prototype_queries(const SyntheticSpec& spec);
/// Base color of a class (distinct hues).
Eigen::Vector3f class_color(int class_id, int num_classes);

/// Objects are clusters of Gaussians inside boxes/spheres with distinct classes;
/// cameras sit on a sphere around the centroid looking at it. Deterministic in `seed`.
SyntheticScene synth_scene(const SyntheticSpec& spec, std::uint64_t seed);

/// Ground-truth class per pixel rendered through the confidence splatting path
/// (one-hot class confidences), kUnknownLabel where accumulated alpha < 0.5.
std::vector<int> gt_label_map(const GaussianScene& scene, const std::vector<int>& labels, int num_classes,
                              const Camera& cam, int workers = 1);

struct FeatureSynthesis {
  float sigma = 0.0f;
  std::uint64_t seed = 0;
  /// Optional class -> class substitution applied before choosing the prototype.
  std::vector<int> remap;
};

/// Covered pixels get normalize(prototype[class] + sigma / sqrt(C) * N(0, I)); others stay unassigned.
FeatureMap synth_features(const std::vector<int>& gt_labels, const Camera& cam, const RowMatrixXf& prototypes,
                          const FeatureSynthesis& options);

/// Drops Gaussians that no view observes under noise-free features, repeating until the
/// views observe every remaining Gaussian.
SyntheticScene fully_covered(const SyntheticScene& syn, const SyntheticSpec& spec, int workers = 1);

struct SegMetrics {
  int num_classes = 0;
  /// confusion[gt][pred], pred column num_classes counts "unknown".
  std::vector<std::vector<std::uint64_t>> confusion;
  std::vector<double> iou;      // per class; NaN when the class is absent from ground truth
  std::vector<double> accuracy; // per class recall; NaN when absent
  double miou = 0.0;
  double macc = 0.0;
};

/// Accumulates confusion over many label images before computing metrics.
class SegEvaluator {
public:
  explicit SegEvaluator(int num_classes);
  /// Only pixels with gt >= 0 count; pred < 0 counts as unknown.
  void add(const std::vector<int>& pred, const std::vector<int>& gt);
  SegMetrics metrics() const;

private:
  int k_;
  std::vector<std::vector<std::uint64_t>> confusion_;
};

SegMetrics miou(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes);

struct PixelBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1; // inclusive

  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

/// Fraction of predicted pixels inside their box (inclusive bounds).
double loc_accuracy(const std::vector<std::array<int, 2>>& pixels, const std::vector<PixelBox>& boxes);

/// Bounding box of the pixels labeled `class_id`; empty box (x1 < x0) when absent.
PixelBox label_bbox(const std::vector<int>& labels, int width, int class_id);

/// Human-readable per-class table.
std::string format_metrics_table(const SegMetrics& m, const std::vector<std::string>& class_names = {});

} // namespace semgs
