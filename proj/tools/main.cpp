// semgs: command line entry point.
//
// Exit codes: 0 success, 1 contract/data/format/io error, 2 usage error.

#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "commands.hpp"
#include "semgs/errors.hpp"

namespace {

using namespace semgs::cli;

/// Every option of `app` with its resolved value (given on the command line or default).
void collect_config(const CLI::App& app, std::map<std::string, std::string>& out) {
  for (const CLI::Option* opt : app.get_options()) {
    if (opt == app.get_help_ptr() || opt == app.get_help_all_ptr()) continue;
    const std::string name = opt->get_name(false, true);
    if (name.empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      if (value.empty()) value = "true";
    } else {
      value = opt->get_default_str();
      if (value.empty() && opt->get_expected_min() == 0) value = "false";
    }
    out[name] = value;
  }
}

void log_config(const Common& common, const CLI::App& root, const CLI::App& sub) {
  std::map<std::string, std::string> config;
  collect_config(root, config);
  collect_config(sub, config);
  if (common.log_json) {
    nlohmann::json j{{"level", "info"}, {"subcommand", sub.get_name()}, {"config", config}};
    std::cerr << j.dump() << "\n";
    return;
  }
  if (common.log_level == "warn" || common.log_level == "error") return;
  std::cerr << "[info] semgs " << sub.get_name() << " config:";
  for (const auto& [k, v] : config) std::cerr << " " << k << "=" << v;
  std::cerr << "\n";
}

void add_fields(CLI::App* sub, FieldArgs& f) {
  sub->add_option("--scene", f.scene, "Scene PLY (sidecar fields are attached when present)")->required()->check(CLI::ExistingFile);
  sub->add_option("--field2d", f.field2d, "Projected field SGSF file (overrides sidecar)")->check(CLI::ExistingFile);
  sub->add_option("--field3d", f.field3d, "Predicted field SGSF file (overrides sidecar)")->check(CLI::ExistingFile);
  sub->add_option("--queries", f.queries, "Text queries (SGTE or JSON)")->required()->check(CLI::ExistingFile);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"semgs: semantic fields for 3D Gaussian splatting scenes"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  Common common;
  app.add_option("--workers", common.workers, "Worker threads for rendering and projection")->check(CLI::Range(1, 256));
  app.add_option("--seed", common.seed, "Seed for every random choice");
  app.add_option("--log-level", common.log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
  app.add_flag("--log-json", common.log_json, "Emit logs as JSON lines");

  std::map<CLI::App*, std::function<void()>> handlers;
  const auto sub = [&](const std::string& name, const std::string& help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->fallthrough();
    return s;
  };

  RenderArgs render;
  {
    auto* s = sub("render", "Render a view to an 8-bit RGB PNG");
    s->add_option("--scene", render.scene, "Scene PLY")->required()->check(CLI::ExistingFile);
    s->add_option("--camera", render.camera, "Camera JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--view", render.view, "Camera index");
    s->add_option("--out", render.out, "Output PNG")->required();
    s->add_option("--background", render.background, "Background r,g,b")->delimiter(',')->expected(3);
    s->add_option("--depth-out", render.depth_out, "Optional depth SGFM (C=1, validity mask)");
    s->add_option("--alpha-d", render.alpha_d, "Opacity threshold of the depth event")->check(CLI::Range(0.0f, 1.0f));
    handlers[s] = [&] { run_render(common, render); };
  }

  ProjectArgs project;
  {
    auto* s = sub("project", "Fuse per-view feature maps into a per-Gaussian field");
    s->add_option("--scene", project.scene, "Scene PLY")->required()->check(CLI::ExistingFile);
    s->add_option("--camera", project.camera, "Camera JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--features", project.features, "Directory of <view index>.sgfm files")->required()->check(CLI::ExistingDirectory);
    s->add_option("--out", project.out, "Output SGSF field")->required();
    s->add_option("--alpha-d", project.alpha_d, "Opacity threshold of the depth event")->check(CLI::Range(0.0f, 1.0f));
    s->add_option("--tol-rel", project.tol_rel, "Relative depth band");
    s->add_option("--tol-abs", project.tol_abs, "Absolute depth band (scene units)");
    handlers[s] = [&] { run_project(common, project); };
  }

  UnifyArgs unify;
  {
    auto* s = sub("unify", "Turn masks plus features into a uniform feature map");
    s->add_option("--mode", unify.mode, "pixel, instance, image or ids")
        ->check(CLI::IsMember({"pixel", "instance", "image", "ids"}));
    s->add_option("--masks", unify.masks, "MaskSet JSON")->check(CLI::ExistingFile);
    s->add_option("--source", unify.source, "Source SGFM for pixel mode")->check(CLI::ExistingFile);
    s->add_option("--ids", unify.ids, "Instance id PNG for ids mode")->check(CLI::ExistingFile);
    s->add_option("--num-ids", unify.num_ids, "Number of instance ids K for ids mode");
    s->add_option("--dtype", unify.dtype, "f32 or f16")->check(CLI::IsMember({"f32", "f16"}));
    s->add_option("--out", unify.out, "Output SGFM")->required();
    handlers[s] = [&] { run_unify(common, unify); };
  }

  TrainArgs train;
  {
    auto* s = sub("train-net", "Train the sparse 3D network against projected fields");
    s->add_option("--scene", train.scenes, "Training scene PLY (repeatable)")->required()->check(CLI::ExistingFile);
    s->add_option("--field", train.fields, "Target SGSF per scene (default: the scene's projected sidecar)")
        ->check(CLI::ExistingFile);
    s->add_option("--epochs", train.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    s->add_option("--lr", train.lr, "SGD learning rate")->check(CLI::NonNegativeNumber);
    s->add_option("--momentum", train.momentum, "SGD momentum")->check(CLI::Range(0.0, 1.0));
    s->add_option("--voxel-size", train.voxel_size, "Voxel edge length (scene units)")->check(CLI::PositiveNumber);
    s->add_option("--widths", train.widths, "Sparse conv layer widths")->delimiter(',');
    s->add_option("--out", train.out, "Output SGNW checkpoint")->required();
    s->add_option("--loss-csv", train.loss_csv, "Optional per-epoch loss CSV");
    handlers[s] = [&] { run_train(common, train); };
  }

  PredictArgs predict;
  {
    auto* s = sub("predict-net", "Predict a per-Gaussian field with a trained network");
    s->add_option("--scene", predict.scene, "Scene PLY")->required()->check(CLI::ExistingFile);
    s->add_option("--checkpoint", predict.checkpoint, "SGNW checkpoint")->required()->check(CLI::ExistingFile);
    s->add_option("--out", predict.out, "Output SGSF field")->required();
    handlers[s] = [&] { run_predict(common, predict); };
  }

  QueryArgs query;
  {
    auto* s = sub("query", "Classify every Gaussian against the text queries");
    add_fields(s, query.fields);
    s->add_option("--temperature", query.temperature, "Softmax temperature")->check(CLI::PositiveNumber);
    s->add_option("--out", query.out, "Output CSV (gaussian,label,confidence)")->required();
    handlers[s] = [&] { run_query(common, query); };
  }

  SegmentArgs segment;
  {
    auto* s = sub("segment", "Segment a view by confidence splatting");
    add_fields(s, segment.fields);
    s->add_option("--camera", segment.camera, "Camera JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--view-index", segment.view, "Camera index");
    s->add_option("--alpha-d", segment.alpha_d, "Accumulated alpha below which pixels are unknown")
        ->check(CLI::Range(0.0f, 1.0f));
    s->add_option("--temperature", segment.temperature, "Softmax temperature")->check(CLI::PositiveNumber);
    s->add_option("--out", segment.out, "Output 16-bit label PNG (0 unknown, k+1 class k)")->required();
    s->add_option("--confidence-out", segment.confidence_out, "Optional per-class confidence SGFM");
    handlers[s] = [&] { run_segment(common, segment); };
  }

  LocalizeArgs localize;
  {
    auto* s = sub("localize", "Find the pixel most relevant to a query label");
    add_fields(s, localize.fields);
    s->add_option("--camera", localize.camera, "Camera JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--view-index", localize.view, "Camera index");
    s->add_option("--label", localize.label, "Query label")->required();
    s->add_option("--out", localize.out, "Output JSON")->required();
    s->add_option("--relevancy-out", localize.relevancy_out, "Optional relevancy SGFM");
    handlers[s] = [&] { run_localize(common, localize); };
  }

  EditArgs edit;
  {
    auto* s = sub("edit", "Select Gaussians by language and remove, translate or recolor them");
    add_fields(s, edit.fields);
    s->add_option("--label", edit.label, "Query label")->required();
    s->add_option("--threshold", edit.threshold, "Cosine threshold for selection")->check(CLI::Range(-1.0f, 1.0f));
    s->add_option("--op", edit.op, "remove, translate or recolor")->check(CLI::IsMember({"remove", "translate", "recolor"}));
    s->add_option("--delta", edit.delta, "Translation x,y,z")->delimiter(',')->expected(3);
    s->add_option("--rgb", edit.rgb, "Recolor target r,g,b")->delimiter(',')->expected(3);
    s->add_option("--out", edit.out, "Output scene PLY (fields written as sidecars)")->required();
    handlers[s] = [&] { run_edit(common, edit); };
  }

  SynthArgs synth;
  {
    auto* s = sub("synth-scene", "Generate a labeled synthetic scene with oracle feature maps");
    s->add_option("--out-dir", synth.out_dir, "Output directory")->required();
    s->add_option("--objects", synth.objects, "Object count range min,max")->delimiter(',')->expected(2);
    s->add_option("--gaussians-per-object", synth.gaussians_per_object, "Gaussians per object")->check(CLI::PositiveNumber);
    s->add_option("--classes", synth.classes, "Number of classes K")->check(CLI::PositiveNumber);
    s->add_option("--channels", synth.channels, "Embedding width C")->check(CLI::PositiveNumber);
    s->add_option("--views", synth.views, "Number of cameras")->check(CLI::PositiveNumber);
    s->add_option("--width", synth.width, "Image width")->check(CLI::PositiveNumber);
    s->add_option("--height", synth.height, "Image height")->check(CLI::PositiveNumber);
    s->add_option("--sigma", synth.sigma, "Feature noise scale")->check(CLI::NonNegativeNumber);
    s->add_option("--prototype-seed", synth.prototype_seed, "Seed of the class prototypes");
    handlers[s] = [&] { run_synth(common, synth); };
  }

  EvalSegArgs eval_seg;
  {
    auto* s = sub("eval-seg", "mIoU / mAcc of predicted label PNGs against ground truth");
    s->add_option("--pred", eval_seg.pred, "Predicted label PNGs")->required()->check(CLI::ExistingFile);
    s->add_option("--gt", eval_seg.gt, "Ground-truth label PNGs, same order")->required()->check(CLI::ExistingFile);
    s->add_option("--classes", eval_seg.classes, "Number of classes K")->check(CLI::PositiveNumber);
    s->add_option("--out", eval_seg.out, "Optional metrics JSON");
    handlers[s] = [&] { run_eval_seg(common, eval_seg); };
  }

  EvalLocArgs eval_loc;
  {
    auto* s = sub("eval-loc", "Localization accuracy of localize outputs against boxes");
    s->add_option("--pred", eval_loc.pred, "localize output JSON files")->required()->check(CLI::ExistingFile);
    s->add_option("--boxes", eval_loc.boxes, "JSON array of [x0,y0,x1,y1] (or {\"box\": [...]}) in prediction order")
        ->required()
        ->check(CLI::ExistingFile);
    s->add_option("--out", eval_loc.out, "Optional result JSON");
    handlers[s] = [&] { run_eval_loc(common, eval_loc); };
  }

  ValidateArgs validate;
  {
    auto* s = sub("validate", "Check files against their format contracts");
    s->add_option("--featuremap", validate.featuremaps, "SGFM files");
    s->add_option("--field", validate.fields, "SGSF files");
    s->add_option("--queries", validate.queries, "SGTE or JSON query files");
    s->add_option("--masks", validate.masks, "MaskSet JSON files");
    s->add_option("--scene", validate.scenes, "Scene PLY files");
    s->add_option("--cameras", validate.cameras, "Camera JSON files");
    s->add_option("--checkpoint", validate.checkpoints, "SGNW checkpoints");
    handlers[s] = [&] { run_validate(common, validate); };
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    for (const auto& [subcommand, handler] : handlers) {
      if (!subcommand->parsed()) continue;
      log_config(common, app, *subcommand);
      handler();
    }
  } catch (const std::exception& e) {
    if (common.log_json)
      std::cerr << nlohmann::json{{"level", "error"}, {"message", e.what()}}.dump() << "\n";
    else
      std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
