#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "semgs/errors.hpp"
#include "semgs/eval.hpp"
#include "semgs/feature_map.hpp"
#include "semgs/image_io.hpp"
#include "semgs/mask_unify.hpp"
#include "semgs/projection.hpp"
#include "semgs/query.hpp"
#include "semgs/render.hpp"
#include "semgs/scene_io.hpp"
#include "semgs/semantic_net.hpp"

namespace semgs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int level_rank(const std::string& level) {
  if (level == "debug") return 0;
  if (level == "info") return 1;
  if (level == "warn") return 2;
  return 3;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Camera pick_camera(const std::string& path, int view) {
  const auto cameras = load_cameras(path);
  if (view < 0 || static_cast<std::size_t>(view) >= cameras.size())
    throw ContractError("--view " + std::to_string(view) + " out of range: " + path + " has " +
                        std::to_string(cameras.size()) + " cameras");
  return cameras[static_cast<std::size_t>(view)];
}

Eigen::Vector3f vec3(const std::vector<float>& v, const std::string& flag) {
  if (v.size() != 3) throw ContractError(flag + " expects 3 comma-separated values");
  return {v[0], v[1], v[2]};
}

/// Scene with fields from sidecars, overridden by explicit field flags.
GaussianScene load_with_fields(const FieldArgs& args) {
  GaussianScene scene = load_scene(args.scene);
  if (!args.field2d.empty()) scene.semantic2d = read_field(args.field2d);
  if (!args.field3d.empty()) scene.semantic3d = read_field(args.field3d);
  try {
    scene.validate();
  } catch (const DataError& e) {
    throw DataError(args.scene + ": " + e.what());
  }
  if (!scene.semantic2d && !scene.semantic3d)
    throw ContractError("no semantic field for " + args.scene + ": pass --field2d/--field3d or attach sidecars");
  return scene;
}

LabelImage to_label_image(const std::vector<int>& labels, int width, int height) {
  LabelImage img{width, height, std::vector<std::uint16_t>(labels.size(), 0)};
  for (std::size_t p = 0; p < labels.size(); ++p)
    img.pixels[p] = labels[p] < 0 ? std::uint16_t{0} : static_cast<std::uint16_t>(labels[p] + 1);
  return img;
}

std::vector<int> from_label_image(const LabelImage& img) {
  std::vector<int> labels(img.pixels.size());
  for (std::size_t p = 0; p < labels.size(); ++p) labels[p] = static_cast<int>(img.pixels[p]) - 1;
  return labels;
}

FeatureMap image_to_feature_map(const RenderedImage& img) {
  FeatureMap map(img.height, img.width, img.channels);
  for (std::size_t p = 0; p < map.pixel_count(); ++p)
    if (img.alpha[p] > 0.0f) map.set(p, img.pixel(p));
  return map;
}

std::string metrics_json(const SegMetrics& m) {
  json j;
  j["miou"] = m.miou;
  j["macc"] = m.macc;
  json per = json::array();
  for (int k = 0; k < m.num_classes; ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (std::isnan(m.iou[i])) continue;
    per.push_back({{"class", k}, {"iou", m.iou[i]}, {"acc", m.accuracy[i]}});
  }
  j["classes"] = per;
  j["confusion"] = m.confusion;
  return j.dump(2) + "\n";
}

} // namespace

void log_info(const Common& common, const std::string& message) {
  if (level_rank(common.log_level) > 1) return;
  if (common.log_json)
    std::cerr << json{{"level", "info"}, {"message", message}}.dump() << "\n";
  else
    std::cerr << "[info] " << message << "\n";
}

void run_render(const Common& common, const RenderArgs& args) {
  const GaussianScene scene = load_ply(args.scene);
  const Camera cam = pick_camera(args.camera, args.view);
  const RenderOptions opts{common.workers, kDefaultZNear};
  const RenderedImage img = render_rgb(scene, cam, vec3(args.background, "--background"), opts);
  write_png_rgb8(args.out, img.width, img.height, to_rgb8(img));
  log_info(common, "rendered " + std::to_string(scene.size()) + " gaussians to " + args.out);
  if (!args.depth_out.empty()) {
    const DepthMap depth = render_depth(scene, cam, args.alpha_d, opts);
    FeatureMap map(depth.height, depth.width, 1);
    for (std::size_t p = 0; p < map.pixel_count(); ++p)
      if (depth.valid(p)) map.set(p, std::span<const float>(&depth.depth[p], 1));
    write_feature_map(map, args.depth_out);
    log_info(common, "depth written to " + args.depth_out);
  }
}

void run_project(const Common& common, const ProjectArgs& args) {
  const GaussianScene scene = load_ply(args.scene);
  const auto cameras = load_cameras(args.camera);
  std::vector<View> views;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    const fs::path file = fs::path(args.features) / (std::to_string(i) + ".sgfm");
    views.push_back({cameras[i], read_feature_map(file)});
    if (views.back().features.width != cameras[i].width || views.back().features.height != cameras[i].height)
      throw ContractError(file.string() + ": size does not match camera " + std::to_string(i));
  }
  ProjectionOptions opts;
  opts.alpha_depth = args.alpha_d;
  opts.tolerance = {args.tol_rel, args.tol_abs};
  opts.workers = common.workers;
  const SemanticField field = project_scene(scene, views, opts);
  write_field(field, args.out);
  std::size_t observed = 0;
  for (auto c : field.counts) observed += c > 0;
  log_info(common, "projected " + std::to_string(views.size()) + " views; " + std::to_string(observed) + "/" +
                       std::to_string(scene.size()) + " gaussians observed");
}

void run_unify(const Common& common, const UnifyArgs& args) {
  FeatureMap out;
  if (args.mode == "ids") {
    if (args.ids.empty()) throw ContractError("--ids is required for --mode ids");
    out = one_hot_ids(read_png_gray(args.ids), args.num_ids);
  } else {
    if (args.masks.empty()) throw ContractError("--masks is required for --mode " + args.mode);
    const MaskSet masks = read_mask_set(args.masks);
    if (args.mode == "pixel") {
      if (args.source.empty()) throw ContractError("--source is required for --mode pixel");
      const FeatureMap source = read_feature_map(args.source);
      out = unify(UnifyMode::pixel, masks, &source);
    } else {
      out = unify(args.mode == "instance" ? UnifyMode::instance : UnifyMode::image, masks);
    }
  }
  write_feature_map(out, args.out, args.dtype == "f16" ? FeatureDtype::f16 : FeatureDtype::f32);
  log_info(common, "unified feature map written to " + args.out);
}

void run_train(const Common& common, const TrainArgs& args) {
  if (!args.fields.empty() && args.fields.size() != args.scenes.size())
    throw ContractError("--field must be given once per --scene");
  std::vector<GaussianScene> scenes;
  std::vector<SemanticField> fields;
  for (std::size_t i = 0; i < args.scenes.size(); ++i) {
    GaussianScene scene = load_scene(args.scenes[i]);
    SemanticField field;
    if (!args.fields.empty())
      field = read_field(args.fields[i]);
    else if (scene.semantic2d)
      field = *scene.semantic2d;
    else
      throw ContractError(args.scenes[i] + " has no projected field; pass --field");
    if (field.rows() != scene.size())
      throw ContractError("field for " + args.scenes[i] + " has " + std::to_string(field.rows()) + " rows, scene has " +
                          std::to_string(scene.size()) + " gaussians");
    scenes.push_back(std::move(scene));
    fields.push_back(std::move(field));
  }
  const std::size_t channels = fields.front().channels();
  std::vector<TrainingScene> dataset;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (fields[i].channels() != channels) throw ContractError("training fields differ in channel count");
    dataset.push_back({&scenes[i], &fields[i]});
  }
  NetArchitecture arch;
  arch.conv_widths = args.widths;
  arch.output_channels = static_cast<int>(channels);
  arch.voxel_size = args.voxel_size;
  TrainConfig config;
  config.epochs = args.epochs;
  config.learning_rate = args.lr;
  config.momentum = args.momentum;
  config.seed = common.seed;
  const TrainResult result = train(SparseConvNet::initialized(arch, common.seed), dataset, config);
  save_checkpoint(result.net, args.out);
  if (!args.loss_csv.empty()) write_loss_csv(result.loss_trace, args.loss_csv);
  std::ostringstream msg;
  msg << "trained " << args.epochs << " epochs on " << scenes.size() << " scenes";
  if (!result.loss_trace.empty()) msg << "; final loss " << result.loss_trace.back();
  log_info(common, msg.str());
}

void run_predict(const Common& common, const PredictArgs& args) {
  const GaussianScene scene = load_ply(args.scene);
  const SparseConvNet net = load_checkpoint(args.checkpoint);
  write_field(predict_field(net, scene), args.out);
  log_info(common, "predicted field for " + std::to_string(scene.size()) + " gaussians written to " + args.out);
}

void run_query(const Common& common, const QueryArgs& args) {
  const GaussianScene scene = load_with_fields(args.fields);
  const TextQuerySet queries = read_queries(args.fields.queries);
  const Classification cls = classify(field_scores(FieldSet::of(scene), queries), args.temperature);
  std::ostringstream out;
  out << "gaussian,label,confidence\n" << std::setprecision(9);
  for (std::size_t i = 0; i < cls.labels.size(); ++i) {
    const int l = cls.labels[i];
    out << i << ',' << (l < 0 ? std::string("unknown") : queries.labels[static_cast<std::size_t>(l)]) << ','
        << (l < 0 ? 0.0f : cls.confidences(static_cast<Eigen::Index>(i), l)) << '\n';
  }
  write_text(args.out, out.str());
  log_info(common, "classified " + std::to_string(scene.size()) + " gaussians into " + args.out);
}

void run_segment(const Common& common, const SegmentArgs& args) {
  const GaussianScene scene = load_with_fields(args.fields);
  const TextQuerySet queries = read_queries(args.fields.queries);
  const Camera cam = pick_camera(args.camera, args.view);
  SegmentOptions opts;
  opts.temperature = args.temperature;
  opts.alpha_d = args.alpha_d;
  opts.workers = common.workers;
  const Segmentation seg = segment_view(scene, cam, queries, FieldSet::of(scene), opts);
  write_png_gray16(args.out, to_label_image(seg.labels, seg.width, seg.height));
  if (!args.confidence_out.empty()) write_feature_map(image_to_feature_map(seg.confidence), args.confidence_out);
  std::size_t known = 0;
  for (int l : seg.labels) known += l >= 0;
  log_info(common, "segmented view " + std::to_string(args.view) + ": " + std::to_string(known) + " labeled pixels");
}

void run_localize(const Common& common, const LocalizeArgs& args) {
  const GaussianScene scene = load_with_fields(args.fields);
  const TextQuerySet queries = read_queries(args.fields.queries);
  const std::size_t k = queries.find(args.label);
  const Camera cam = pick_camera(args.camera, args.view);
  const Eigen::RowVectorXf q = queries.embeddings.row(static_cast<Eigen::Index>(k));
  const Localization loc =
      localize(scene, cam, FieldSet::of(scene), std::span<const float>(q.data(), static_cast<std::size_t>(q.size())),
               common.workers);
  const json j{{"label", args.label},
               {"view", args.view},
               {"x", loc.x},
               {"y", loc.y},
               {"gaussian", loc.gaussian},
               {"point", {loc.point.x(), loc.point.y(), loc.point.z()}}};
  write_text(args.out, j.dump(2) + "\n");
  if (!args.relevancy_out.empty()) write_feature_map(image_to_feature_map(loc.relevancy), args.relevancy_out);
  log_info(common, "'" + args.label + "' localized at pixel (" + std::to_string(loc.x) + ", " + std::to_string(loc.y) + ")");
}

void run_edit(const Common& common, const EditArgs& args) {
  const GaussianScene scene = load_with_fields(args.fields);
  const TextQuerySet queries = read_queries(args.fields.queries);
  const std::size_t k = queries.find(args.label);
  const auto selection = select(field_scores(FieldSet::of(scene), queries), k, args.threshold);
  EditOp op;
  if (args.op == "translate")
    op = EditOp::translate(vec3(args.delta, "--delta"));
  else if (args.op == "recolor")
    op = EditOp::recolor(vec3(args.rgb, "--rgb"));
  const GaussianScene edited = edit(scene, selection, op);
  save_scene(edited, args.out);
  log_info(common, args.op + " applied to " + std::to_string(selection.size()) + " gaussians; wrote " + args.out);
}

void run_synth(const Common& common, const SynthArgs& args) {
  if (args.objects.size() != 2) throw ContractError("--objects expects min,max");
  SyntheticSpec spec;
  spec.min_objects = args.objects[0];
  spec.max_objects = args.objects[1];
  spec.gaussians_per_object = args.gaussians_per_object;
  spec.num_classes = args.classes;
  spec.channels = args.channels;
  spec.views = args.views;
  spec.width = args.width;
  spec.height = args.height;
  spec.prototype_seed = args.prototype_seed;
  if (!(args.sigma >= 0.0f)) throw ContractError("--sigma must be non-negative");

  const fs::path dir(args.out_dir);
  fs::create_directories(dir / "gt");
  fs::create_directories(dir / "features");
  const SyntheticScene syn = synth_scene(spec, common.seed);
  save_ply(syn.scene, dir / "scene.ply");
  save_cameras(syn.cameras, dir / "cameras.json");
  const TextQuerySet queries = prototype_queries(spec);
  write_queries(queries, dir / "queries.sgte");

  json objects = json::array();
  for (const auto& o : syn.objects)
    objects.push_back({{"class", o.class_id},
                       {"primitive", o.primitive == Primitive::box ? "box" : "sphere"},
                       {"center", {o.center.x(), o.center.y(), o.center.z()}},
                       {"radius", o.radius}});
  write_text(dir / "labels.json",
             json{{"num_classes", spec.num_classes}, {"labels", syn.labels}, {"objects", objects}}.dump(2) + "\n");

  const RowMatrixXf prototypes = class_prototypes(spec);
  json boxes = json::array();
  for (std::size_t v = 0; v < syn.cameras.size(); ++v) {
    const Camera& cam = syn.cameras[v];
    const auto gt = gt_label_map(syn.scene, syn.labels, spec.num_classes, cam, common.workers);
    write_png_gray16(dir / "gt" / (std::to_string(v) + ".png"), to_label_image(gt, cam.width, cam.height));
    const FeatureSynthesis fsyn{args.sigma, derive_seed(common.seed, v), {}};
    write_feature_map(synth_features(gt, cam, prototypes, fsyn), dir / "features" / (std::to_string(v) + ".sgfm"));
    for (const auto& o : syn.objects) {
      const PixelBox b = label_bbox(gt, cam.width, o.class_id);
      if (b.x1 < b.x0) continue;
      boxes.push_back({{"view", v}, {"label", queries.labels[static_cast<std::size_t>(o.class_id)]}, {"box", {b.x0, b.y0, b.x1, b.y1}}});
    }
  }
  write_text(dir / "gt" / "boxes.json", boxes.dump(2) + "\n");
  log_info(common, "synthesized " + std::to_string(syn.objects.size()) + " objects, " + std::to_string(syn.scene.size()) +
                       " gaussians, " + std::to_string(syn.cameras.size()) + " views into " + args.out_dir);
}

void run_eval_seg(const Common& common, const EvalSegArgs& args) {
  if (args.pred.size() != args.gt.size()) throw ContractError("--pred and --gt must list the same number of images");
  SegEvaluator evaluator(args.classes);
  for (std::size_t i = 0; i < args.pred.size(); ++i) {
    const LabelImage p = read_png_gray(args.pred[i]);
    const LabelImage g = read_png_gray(args.gt[i]);
    if (p.width != g.width || p.height != g.height)
      throw ContractError(args.pred[i] + " and " + args.gt[i] + " differ in size");
    evaluator.add(from_label_image(p), from_label_image(g));
  }
  const SegMetrics m = evaluator.metrics();
  if (!args.out.empty()) write_text(args.out, metrics_json(m));
  std::cout << format_metrics_table(m);
  log_info(common, "evaluated " + std::to_string(args.pred.size()) + " label images");
}

void run_eval_loc(const Common& common, const EvalLocArgs& args) {
  const json boxes_doc = read_json(args.boxes);
  if (!boxes_doc.is_array()) throw FormatError(args.boxes + ": expected a JSON array of boxes");
  std::vector<PixelBox> boxes;
  for (const auto& entry : boxes_doc) {
    const json& b = entry.is_object() ? entry.at("box") : entry;
    if (!b.is_array() || b.size() != 4) throw FormatError(args.boxes + ": each box needs [x0, y0, x1, y1]");
    boxes.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()});
  }
  std::vector<std::array<int, 2>> pixels;
  for (const auto& path : args.pred) {
    const json j = read_json(path);
    try {
      pixels.push_back({j.at("x").get<int>(), j.at("y").get<int>()});
    } catch (const json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
  }
  if (pixels.size() != boxes.size())
    throw ContractError(std::to_string(pixels.size()) + " predictions but " + std::to_string(boxes.size()) + " boxes");
  const double acc = loc_accuracy(pixels, boxes);
  const json result{{"accuracy", acc}, {"queries", pixels.size()}};
  if (!args.out.empty()) write_text(args.out, result.dump(2) + "\n");
  std::cout << "localization accuracy " << std::fixed << std::setprecision(4) << acc << " over " << pixels.size()
            << " queries\n";
  log_info(common, "evaluated " + std::to_string(pixels.size()) + " localizations");
}

void run_validate(const Common& common, const ValidateArgs& args) {
  std::size_t checked = 0;
  const auto report = [&](const std::string& path, const std::string& what) {
    std::cout << "ok " << path << ": " << what << "\n";
    ++checked;
  };
  for (const auto& p : args.featuremaps) {
    const FeatureMap m = read_feature_map(p);
    m.validate();
    report(p, "feature map " + std::to_string(m.height) + "x" + std::to_string(m.width) + "x" + std::to_string(m.channels));
  }
  for (const auto& p : args.fields) {
    const SemanticField f = read_field(p);
    report(p, "semantic field " + std::to_string(f.rows()) + "x" + std::to_string(f.channels()));
  }
  for (const auto& p : args.queries) {
    const TextQuerySet q = read_queries(p);
    report(p, std::to_string(q.size()) + " queries of width " + std::to_string(q.channels()));
  }
  for (const auto& p : args.masks) {
    const MaskSet m = read_mask_set(p);
    report(p, std::to_string(m.masks.size()) + " masks");
  }
  for (const auto& p : args.scenes) {
    const GaussianScene s = load_scene(p);
    report(p, std::to_string(s.size()) + " gaussians, sh degree " + std::to_string(s.sh_degree));
  }
  for (const auto& p : args.cameras) report(p, std::to_string(load_cameras(p).size()) + " cameras");
  for (const auto& p : args.checkpoints) {
    const SparseConvNet net = load_checkpoint(p);
    report(p, "network with " + std::to_string(net.parameters().size()) + " parameters");
  }
  if (checked == 0) throw ContractError("validate: nothing to check; pass at least one file flag");
  log_info(common, "validated " + std::to_string(checked) + " files");
}

} // namespace semgs::cli
