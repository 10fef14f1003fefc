#include <benchmark/benchmark.h>

#include "semgs/eval.hpp"
#include "semgs/projection.hpp"
#include "semgs/query.hpp"
#include "semgs/render.hpp"
#include "semgs/semantic_net.hpp"

using namespace semgs;

namespace {

SyntheticScene scene_with(int objects, int per_object) {
  SyntheticSpec spec;
  spec.min_objects = spec.max_objects = objects;
  spec.gaussians_per_object = per_object;
  return synth_scene(spec, 42);
}

std::vector<View> feature_views(const SyntheticScene& syn) {
  const SyntheticSpec spec;
  const RowMatrixXf protos = class_prototypes(spec);
  std::vector<View> views;
  for (std::size_t v = 0; v < syn.cameras.size(); ++v) {
    const auto gt = gt_label_map(syn.scene, syn.labels, spec.num_classes, syn.cameras[v]);
    views.push_back({syn.cameras[v], synth_features(gt, syn.cameras[v], protos, {0.1f, v, {}})});
  }
  return views;
}

} // namespace

static void BM_RenderRgb(benchmark::State& state) {
  const SyntheticScene syn = scene_with(4, static_cast<int>(state.range(0)) / 4);
  for (auto _ : state) benchmark::DoNotOptimize(render_rgb(syn.scene, syn.cameras[0]));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(syn.scene.size()));
}
BENCHMARK(BM_RenderRgb)->Arg(400)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

static void BM_RenderDepth(benchmark::State& state) {
  const SyntheticScene syn = scene_with(4, 500);
  for (auto _ : state) benchmark::DoNotOptimize(render_depth(syn.scene, syn.cameras[0]));
}
BENCHMARK(BM_RenderDepth)->Unit(benchmark::kMillisecond);

static void BM_ProjectScene(benchmark::State& state) {
  const SyntheticScene syn = scene_with(5, 200);
  const std::vector<View> views = feature_views(syn);
  ProjectionOptions options;
  options.workers = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(project_scene(syn.scene, views, options));
}
BENCHMARK(BM_ProjectScene)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

static void BM_SparseConvForward(benchmark::State& state) {
  const SyntheticScene syn = scene_with(8, static_cast<int>(state.range(0)) / 8);
  const SparseGrid grid = voxelize(syn.scene);
  const KernelMap kmap = KernelMap::build(grid.coords);
  const SparseConvNet net = SparseConvNet::initialized(NetArchitecture{}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(grid.features, kmap));
  state.counters["voxels"] = static_cast<double>(grid.size());
}
BENCHMARK(BM_SparseConvForward)->Arg(800)->Arg(3200)->Unit(benchmark::kMillisecond);

static void BM_SparseConvGradient(benchmark::State& state) {
  const SyntheticScene syn = scene_with(4, 200);
  const SparseGrid grid = voxelize(syn.scene);
  const KernelMap kmap = KernelMap::build(grid.coords);
  const SparseConvNet net = SparseConvNet::initialized(NetArchitecture{}, 1);
  const RowMatrixXd target = RowMatrixXd::Ones(static_cast<Eigen::Index>(grid.size()), 16);
  const std::vector<std::uint8_t> mask(grid.size(), 1);
  std::vector<double> grad;
  for (auto _ : state) benchmark::DoNotOptimize(net.loss_and_gradient(grid.features, kmap, target, mask, grad));
  state.counters["voxels"] = static_cast<double>(grid.size());
}
BENCHMARK(BM_SparseConvGradient)->Unit(benchmark::kMillisecond);

static void BM_SegmentView(benchmark::State& state) {
  const SyntheticSpec spec;
  SyntheticScene syn = scene_with(5, 200);
  syn.scene.semantic2d = project_scene(syn.scene, feature_views(syn));
  const TextQuerySet queries = prototype_queries(spec);
  const FieldSet fields = FieldSet::of(syn.scene);
  for (auto _ : state) benchmark::DoNotOptimize(segment_view(syn.scene, syn.cameras[0], queries, fields));
}
BENCHMARK(BM_SegmentView)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
