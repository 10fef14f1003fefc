#include "semgs/query.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "semgs/errors.hpp"

namespace semgs {

namespace {

constexpr float kShDc = 0.28209479177387814f;

} // namespace

std::size_t TextQuerySet::find(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw ContractError("query set has no label '" + label + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

void TextQuerySet::validate() const {
  if (labels.empty()) throw DataError("query set: at least one label is required");
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size())
    throw DataError("query set: " + std::to_string(labels.size()) + " labels but " + std::to_string(embeddings.rows()) +
                    " embeddings");
  for (Eigen::Index k = 0; k < embeddings.rows(); ++k) {
    if (!embeddings.row(k).allFinite()) throw DataError("query set: non-finite embedding for '" + labels[static_cast<std::size_t>(k)] + "'");
    if (std::abs(embeddings.row(k).norm() - 1.0f) > 1e-5f)
      throw DataError("query set: embedding for '" + labels[static_cast<std::size_t>(k)] + "' is not unit-norm");
  }
}

TextQuerySet make_queries(std::vector<std::string> labels, RowMatrixXf raw) {
  TextQuerySet q;
  q.labels = std::move(labels);
  q.embeddings = std::move(raw);
  for (Eigen::Index k = 0; k < q.embeddings.rows(); ++k) {
    const double n = q.embeddings.row(k).cast<double>().norm();
    if (!(n > 0.0)) throw DataError("query set: zero embedding at row " + std::to_string(k));
    q.embeddings.row(k) = (q.embeddings.row(k).cast<double>() / n).cast<float>();
  }
  q.validate();
  return q;
}

TextQuerySet read_queries(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const auto first = std::find_if(bytes.begin(), bytes.end(), [](char c) { return !std::isspace(static_cast<unsigned char>(c)); });
  if (first != bytes.end() && *first == '{') {
    try {
      const auto doc = nlohmann::json::parse(bytes.begin(), bytes.end());
      auto labels = doc.at("labels").get<std::vector<std::string>>();
      const auto rows = doc.at("embeddings").get<std::vector<std::vector<float>>>();
      if (rows.size() != labels.size()) throw FormatError(path.string() + ": labels and embeddings differ in length");
      const std::size_t c = rows.empty() ? 0 : rows.front().size();
      RowMatrixXf raw(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(c));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].size() != c) throw FormatError(path.string() + ": embedding rows differ in width");
        for (std::size_t j = 0; j < c; ++j) raw(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = rows[k][j];
      }
      return make_queries(std::move(labels), std::move(raw));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }

  detail::ByteReader r(bytes, path.string());
  if (r.read_magic(4) != "SGTE") throw FormatError(path.string() + ": bad magic (expected SGTE or JSON)");
  const auto k = r.read<std::uint32_t>("label count");
  const auto c = r.read<std::uint32_t>("channel count");
  TextQuerySet q;
  for (std::uint32_t i = 0; i < k; ++i) q.labels.push_back(r.read_cstring("label"));
  q.embeddings.resize(k, c);
  r.read_array(std::span<float>(q.embeddings.data(), static_cast<std::size_t>(k) * c), "embeddings");
  r.expect_end();
  try {
    q.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return q;
}

void write_queries(const TextQuerySet& queries, const std::filesystem::path& path) {
  queries.validate();
  detail::ByteWriter w;
  w.write_bytes("SGTE");
  w.write(static_cast<std::uint32_t>(queries.size()));
  w.write(static_cast<std::uint32_t>(queries.channels()));
  for (const auto& label : queries.labels) {
    if (label.find('\0') != std::string::npos) throw ContractError("query labels must not contain NUL");
    w.write_bytes(label);
    w.write('\0');
  }
  w.write_array(std::span<const float>(queries.embeddings.data(), static_cast<std::size_t>(queries.embeddings.size())));
  w.save(path);
}

ScoreMatrix score(const SemanticField& field, const TextQuerySet& queries) {
  if (field.channels() != queries.channels())
    throw ContractError("score: field has " + std::to_string(field.channels()) + " channels, queries " +
                        std::to_string(queries.channels()));
  ScoreMatrix out;
  out.scores = RowMatrixXf::Zero(static_cast<Eigen::Index>(field.rows()), static_cast<Eigen::Index>(queries.size()));
  out.observed.assign(field.rows(), 0);
  for (std::size_t i = 0; i < field.rows(); ++i) {
    if (!field.observed(i)) continue;
    const auto row = static_cast<Eigen::Index>(i);
    const float n = field.embeddings.row(row).norm();
    if (!(n > 0.0f)) continue; // a zero embedding has no direction to score
    out.observed[i] = 1;
    out.scores.row(row) = (field.embeddings.row(row) / n) * queries.embeddings.transpose();
  }
  return out;
}

ScoreMatrix ensemble(const ScoreMatrix& a, const ScoreMatrix& b) {
  if (a.rows() != b.rows() || a.classes() != b.classes()) throw ContractError("ensemble: score matrices differ in shape");
  ScoreMatrix out;
  out.scores = RowMatrixXf::Zero(a.scores.rows(), a.scores.cols());
  out.observed.assign(a.rows(), 0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (a.observed[i] && b.observed[i]) {
      out.scores.row(row) = a.scores.row(row).cwiseMax(b.scores.row(row));
    } else if (a.observed[i]) {
      out.scores.row(row) = a.scores.row(row);
    } else if (b.observed[i]) {
      out.scores.row(row) = b.scores.row(row);
    } else {
      continue;
    }
    out.observed[i] = 1;
  }
  return out;
}

Classification classify(const ScoreMatrix& scores, float temperature) {
  if (!(temperature > 0.0f)) throw ContractError("classify: temperature must be positive");
  Classification out;
  out.labels.assign(scores.rows(), kUnknownLabel);
  out.confidences = RowMatrixXf::Zero(scores.scores.rows(), scores.scores.cols());
  const Eigen::Index k = scores.scores.cols();
  if (k == 0) return out;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    if (!scores.observed[i]) continue;
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < k; ++c)
      if (scores.scores(row, c) > scores.scores(row, best)) best = c;
    const double top = scores.scores(row, best);
    Eigen::RowVectorXd e(k);
    for (Eigen::Index c = 0; c < k; ++c) e[c] = std::exp((static_cast<double>(scores.scores(row, c)) - top) / temperature);
    out.confidences.row(row) = (e / e.sum()).cast<float>();
    out.labels[i] = static_cast<int>(best);
  }
  return out;
}

ScoreMatrix field_scores(const FieldSet& fields, const TextQuerySet& queries) {
  if (fields.projected == nullptr && fields.predicted == nullptr) throw ContractError("no semantic field attached");
  if (fields.projected && fields.predicted) return ensemble(score(*fields.projected, queries), score(*fields.predicted, queries));
  return score(fields.projected ? *fields.projected : *fields.predicted, queries);
}

namespace {

void check_field_rows(const GaussianScene& scene, const FieldSet& fields) {
  for (const SemanticField* f : {fields.projected, fields.predicted}) {
    if (f && f->rows() != scene.size())
      throw ContractError("semantic field has " + std::to_string(f->rows()) + " rows for " +
                          std::to_string(scene.size()) + " gaussians");
  }
}

} // namespace

Segmentation segment_view(const GaussianScene& scene, const Camera& cam, const TextQuerySet& queries,
                          const FieldSet& fields, const SegmentOptions& options) {
  if (!(options.alpha_d > 0.0f && options.alpha_d < 1.0f)) throw ContractError("segment_view: alpha_d must lie in (0, 1)");
  check_field_rows(scene, fields);
  const Classification cls = classify(field_scores(fields, queries), options.temperature);
  Segmentation seg;
  seg.width = cam.width;
  seg.height = cam.height;
  seg.confidence = render_confidence(scene, cam, cls.confidences, RenderOptions{options.workers, kDefaultZNear});
  seg.labels = argmax_channels(seg.confidence);
  for (std::size_t p = 0; p < seg.labels.size(); ++p) {
    const auto px = seg.confidence.pixel(p);
    const bool has_mass = std::any_of(px.begin(), px.end(), [](float v) { return v > 0.0f; });
    if (seg.confidence.alpha[p] < options.alpha_d || !has_mass) seg.labels[p] = kUnknownLabel;
  }
  return seg;
}

Localization localize(const GaussianScene& scene, const Camera& cam, const FieldSet& fields,
                      std::span<const float> query, int workers) {
  check_field_rows(scene, fields);
  RowMatrixXf q(1, static_cast<Eigen::Index>(query.size()));
  for (std::size_t j = 0; j < query.size(); ++j) q(0, static_cast<Eigen::Index>(j)) = query[j];
  const TextQuerySet single = make_queries({"query"}, q);
  const ScoreMatrix s = field_scores(fields, single);

  Localization loc;
  bool any = false;
  float lo = 0.0f, hi = 0.0f;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    if (!s.observed[i]) continue;
    const float v = s.scores(static_cast<Eigen::Index>(i), 0);
    if (!any || v > hi) {
      hi = v;
      loc.gaussian = static_cast<std::uint32_t>(i);
    }
    if (!any || v < lo) lo = v;
    any = true;
  }
  if (!any) throw ContractError("localize: every gaussian is unobserved");
  loc.point = scene.gaussians[loc.gaussian].position;

  RowMatrixXf relevancy = RowMatrixXf::Zero(static_cast<Eigen::Index>(scene.size()), 1);
  if (hi > lo) {
    for (std::size_t i = 0; i < s.rows(); ++i)
      if (s.observed[i]) relevancy(static_cast<Eigen::Index>(i), 0) = (s.scores(static_cast<Eigen::Index>(i), 0) - lo) / (hi - lo);
  }
  loc.relevancy = render_confidence(scene, cam, relevancy, RenderOptions{workers, kDefaultZNear});
  const auto& v = loc.relevancy.values;
  const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  loc.x = static_cast<int>(best % static_cast<std::size_t>(cam.width));
  loc.y = static_cast<int>(best / static_cast<std::size_t>(cam.width));
  return loc;
}

std::vector<std::uint32_t> select(const ScoreMatrix& scores, std::size_t column, float threshold) {
  if (!(threshold > -1.0f && threshold < 1.0f)) throw ContractError("select: threshold must lie in (-1, 1)");
  if (column >= scores.classes()) throw ContractError("select: query column out of range");
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < scores.rows(); ++i)
    if (scores.observed[i] && scores.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(column)) >= threshold)
      out.push_back(static_cast<std::uint32_t>(i));
  return out;
}

std::vector<std::uint32_t> select(const SemanticField& field, std::span<const float> query, float threshold) {
  RowMatrixXf q(1, static_cast<Eigen::Index>(query.size()));
  for (std::size_t j = 0; j < query.size(); ++j) q(0, static_cast<Eigen::Index>(j)) = query[j];
  return select(score(field, make_queries({"query"}, q)), 0, threshold);
}

GaussianScene edit(const GaussianScene& scene, std::span<const std::uint32_t> selection, const EditOp& op) {
  std::vector<std::uint8_t> selected(scene.size(), 0);
  for (std::uint32_t i : selection) {
    if (i >= scene.size())
      throw ContractError("edit: index " + std::to_string(i) + " out of range for " + std::to_string(scene.size()) +
                          " gaussians");
    selected[i] = 1;
  }

  if (op.kind != EditOp::Kind::remove) {
    GaussianScene out = scene;
    for (std::size_t i = 0; i < scene.size(); ++i) {
      if (!selected[i]) continue;
      Gaussian& g = out.gaussians[i];
      if (op.kind == EditOp::Kind::translate) {
        g.position += op.delta;
      } else {
        const Eigen::Vector3f target = op.rgb.cwiseMax(0.0f).cwiseMin(1.0f);
        g.sh.fill(Eigen::Vector3f::Zero());
        g.sh[0] = (target.array() - 0.5f) / kShDc;
      }
    }
    return out;
  }

  GaussianScene out;
  out.sh_degree = scene.sh_degree;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (selected[i]) continue;
    out.gaussians.push_back(scene.gaussians[i]);
    keep.push_back(static_cast<Eigen::Index>(i));
  }
  const auto filter = [&](const std::optional<SemanticField>& f) -> std::optional<SemanticField> {
    if (!f) return std::nullopt;
    SemanticField r(keep.size(), f->channels());
    r.normalized = f->normalized;
    for (std::size_t j = 0; j < keep.size(); ++j) {
      r.embeddings.row(static_cast<Eigen::Index>(j)) = f->embeddings.row(keep[j]);
      r.counts[j] = f->counts[static_cast<std::size_t>(keep[j])];
    }
    return r;
  };
  out.semantic2d = filter(scene.semantic2d);
  out.semantic3d = filter(scene.semantic3d);
  return out;
}

} // namespace semgs
