// commands.hpp
//
// Option structs and handlers for the semgs subcommands. Handlers throw the
// library's exception types; main() maps them to exit codes.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace semgs::cli {

struct Common {
  int workers = 1;
  std::uint64_t seed = 0;
  std::string log_level = "info";
  bool log_json = false;
};

/// Messages at or above the configured level go to stderr.
void log_info(const Common& common, const std::string& message);

struct RenderArgs {
  std::string scene, camera, out, depth_out;
  int view = 0;
  std::vector<float> background{0.0f, 0.0f, 0.0f};
  float alpha_d = 0.5f;
};

struct ProjectArgs {
  std::string scene, camera, features, out;
  float alpha_d = 0.5f;
  double tol_rel = 0.05;
  double tol_abs = 0.01;
};

struct UnifyArgs {
  std::string mode = "pixel";
  std::string masks, source, ids, out;
  int num_ids = 0;
  std::string dtype = "f32";
};

struct TrainArgs {
  std::vector<std::string> scenes, fields;
  int epochs = 200;
  double lr = 0.05;
  double momentum = 0.9;
  double voxel_size = 0.05;
  std::vector<int> widths{32, 64, 64};
  std::string out, loss_csv;
};

struct PredictArgs {
  std::string scene, checkpoint, out;
};

struct FieldArgs {
  std::string scene, field2d, field3d, queries;
};

struct QueryArgs {
  FieldArgs fields;
  float temperature = 0.05f;
  std::string out;
};

struct SegmentArgs {
  FieldArgs fields;
  std::string camera, out, confidence_out;
  int view = 0;
  float alpha_d = 0.5f;
  float temperature = 0.05f;
};

struct LocalizeArgs {
  FieldArgs fields;
  std::string camera, label, out, relevancy_out;
  int view = 0;
};

struct EditArgs {
  FieldArgs fields;
  std::string label, op = "remove", out;
  float threshold = 0.5f;
  std::vector<float> delta{0.0f, 0.0f, 0.0f};
  std::vector<float> rgb{0.5f, 0.5f, 0.5f};
};

struct SynthArgs {
  std::string out_dir;
  std::vector<int> objects{3, 8};
  int gaussians_per_object = 200;
  int classes = 16;
  int channels = 16;
  int views = 20;
  int width = 128;
  int height = 96;
  float sigma = 0.1f;
  std::uint64_t prototype_seed = 7;
};

struct EvalSegArgs {
  std::vector<std::string> pred, gt;
  int classes = 16;
  std::string out;
};

struct EvalLocArgs {
  std::vector<std::string> pred;
  std::string boxes, out;
};

struct ValidateArgs {
  std::vector<std::string> featuremaps, fields, queries, masks, scenes, cameras, checkpoints;
};

void run_render(const Common&, const RenderArgs&);
void run_project(const Common&, const ProjectArgs&);
void run_unify(const Common&, const UnifyArgs&);
void run_train(const Common&, const TrainArgs&);
void run_predict(const Common&, const PredictArgs&);
void run_query(const Common&, const QueryArgs&);
void run_segment(const Common&, const SegmentArgs&);
void run_localize(const Common&, const LocalizeArgs&);
void run_edit(const Common&, const EditArgs&);
void run_synth(const Common&, const SynthArgs&);
void run_eval_seg(const Common&, const EvalSegArgs&);
void run_eval_loc(const Common&, const EvalLocArgs&);
void run_validate(const Common&, const ValidateArgs&);

} // namespace semgs::cli
