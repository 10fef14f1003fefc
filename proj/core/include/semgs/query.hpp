// query.hpp
//
// Open-vocabulary queries against semantic fields: cosine scores, 2D/3D
// max-ensemble, softmax confidences, confidence splatting for view
// segmentation and localization, and language-driven selection/editing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semgs/render.hpp"
#include "semgs/scene.hpp"

namespace semgs {

inline constexpr float kDefaultTemperature = 0.05f;
inline constexpr float kCoverageThreshold = 0.5f;
inline constexpr int kUnknownLabel = -1;

/// Labels with L2-normalized text embeddings (K x C).
struct TextQuerySet {
  std::vector<std::string> labels;
  RowMatrixXf embeddings;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return static_cast<std::size_t>(embeddings.cols()); }
  /// Index of `label`, or throws ContractError.
  std::size_t find(const std::string& label) const;
  void validate() const;
};

/// Normalizes every row; throws DataError on zero rows.
TextQuerySet make_queries(std::vector<std::string> labels, RowMatrixXf raw_embeddings);

/// Binary "SGTE" or JSON {"labels": [...], "embeddings": [[...]]} (rows normalized on read).
TextQuerySet read_queries(const std::filesystem::path& path);
void write_queries(const TextQuerySet& queries, const std::filesystem::path& path);

/// N x K cosine similarities; unobserved rows are zero and flagged.
struct ScoreMatrix {
  RowMatrixXf scores;
  std::vector<std::uint8_t> observed;

  std::size_t rows() const { return observed.size(); }
  std::size_t classes() const { return static_cast<std::size_t>(scores.cols()); }
};

ScoreMatrix score(const SemanticField& field, const TextQuerySet& queries);

/// Element-wise max where both are observed, the observed side where only one is.
ScoreMatrix ensemble(const ScoreMatrix& projected, const ScoreMatrix& predicted);

struct Classification {
  std::vector<int> labels;  // kUnknownLabel for unobserved Gaussians
  RowMatrixXf confidences;  // softmax(scores / T) per observed row, zero rows otherwise
};

Classification classify(const ScoreMatrix& scores, float temperature = kDefaultTemperature);

/// Fields to query; either may be absent but not both.
struct FieldSet {
  const SemanticField* projected = nullptr;
  const SemanticField* predicted = nullptr;

  static FieldSet of(const GaussianScene& scene) {
    return {scene.semantic2d ? &*scene.semantic2d : nullptr, scene.semantic3d ? &*scene.semantic3d : nullptr};
  }
};

/// score() of each present field, ensembled when both are present.
ScoreMatrix field_scores(const FieldSet& fields, const TextQuerySet& queries);

struct Segmentation {
  int width = 0;
  int height = 0;
  std::vector<int> labels; // per pixel, kUnknownLabel when uncovered
  RenderedImage confidence;
};

struct SegmentOptions {
  float temperature = kDefaultTemperature;
  float alpha_d = kCoverageThreshold; // accumulated alpha below this is unknown
  int workers = 1;
};

/// classify -> render_confidence -> per-pixel argmax. Pixels with accumulated alpha below alpha_d,
/// or with no confidence mass at all, are unknown.
Segmentation segment_view(const GaussianScene& scene, const Camera& cam, const TextQuerySet& queries,
                          const FieldSet& fields, const SegmentOptions& options = {});

struct Localization {
  int x = 0;
  int y = 0;
  std::uint32_t gaussian = 0; // highest-scoring Gaussian
  Eigen::Vector3f point = Eigen::Vector3f::Zero();
  RenderedImage relevancy;    // single channel
};

/// Splats min-max normalized single-query scores; returns the first maximal pixel in scan order.
Localization localize(const GaussianScene& scene, const Camera& cam, const FieldSet& fields,
                      std::span<const float> query, int workers = 1);

/// Observed Gaussians whose cosine to `query` is at least `threshold`.
std::vector<std::uint32_t> select(const SemanticField& field, std::span<const float> query, float threshold);
/// Same rule on a precomputed score column.
std::vector<std::uint32_t> select(const ScoreMatrix& scores, std::size_t column, float threshold);

struct EditOp {
  enum class Kind { remove, translate, recolor };
  Kind kind = Kind::remove;
  Eigen::Vector3f delta = Eigen::Vector3f::Zero();
  Eigen::Vector3f rgb = Eigen::Vector3f::Zero();

  static EditOp remove() { return {}; }
  static EditOp translate(const Eigen::Vector3f& d) { return {Kind::translate, d, Eigen::Vector3f::Zero()}; }
  static EditOp recolor(const Eigen::Vector3f& c) { return {Kind::recolor, Eigen::Vector3f::Zero(), c}; }
};

/// Returns a new scene; removal keeps survivor order and field-row alignment.
GaussianScene edit(const GaussianScene& scene, std::span<const std::uint32_t> selection, const EditOp& op);

} // namespace semgs
