#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "semgs/errors.hpp"
#include "semgs/semantic_net.hpp"

using namespace semgs;

namespace {

/// One or two Gaussians centered in each of `count` distinct random voxels of a small box.
GaussianScene voxel_scene(std::mt19937_64& rng, int count, int box, double voxel_size) {
  std::uniform_int_distribution<int> uc(0, box - 1);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f), us(0.01f, 0.05f), usym(-0.5f, 0.5f);
  std::set<std::array<int, 3>> used;
  GaussianScene s;
  while (static_cast<int>(used.size()) < count) {
    const std::array<int, 3> c{uc(rng), uc(rng), uc(rng)};
    if (!used.insert(c).second) continue;
    const int members = 1 + static_cast<int>(u01(rng) < 0.3f);
    for (int m = 0; m < members; ++m) {
      Gaussian g;
      g.position = ((Eigen::Vector3d(c[0], c[1], c[2]).array() + 0.25 + 0.5 * m) * voxel_size).cast<float>();
      g.rotation = oracle::random_unit_quaternion(rng);
      g.scale = {us(rng), us(rng), us(rng)};
      g.opacity = u01(rng);
      g.sh[0] = {usym(rng), usym(rng), usym(rng)};
      s.gaussians.push_back(g);
    }
  }
  return s;
}

NetArchitecture small_arch(double voxel_size) {
  NetArchitecture a;
  a.conv_widths = {5, 6};
  a.output_channels = 3;
  a.voxel_size = voxel_size;
  return a;
}

RowMatrixXd random_rows(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

SemanticField field_from(const RowMatrixXd& rows) {
  SemanticField f(static_cast<std::size_t>(rows.rows()), static_cast<std::size_t>(rows.cols()));
  f.embeddings = rows.cast<float>();
  std::fill(f.counts.begin(), f.counts.end(), 1u);
  return f;
}

} // namespace

TEST_SUITE("semantic_net") {

TEST_CASE("voxelize examples") {
  GaussianScene s;
  Gaussian a, b, c;
  a.position = {0.03f, 0, 0};
  a.opacity = 0.2f;
  b.position = {0.04f, 0.01f, 0.02f};
  b.opacity = 0.8f;
  c.position = {-0.01f, 0, 0};
  s.gaussians = {a, b, c};
  const SparseGrid g = voxelize(s, 0.05);
  REQUIRE(g.size() == 2);
  CHECK(g.coords[0] == Eigen::Vector3i(-1, 0, 0));
  CHECK(g.coords[1] == Eigen::Vector3i(0, 0, 0));
  CHECK(g.voxel_of == std::vector<std::uint32_t>{1, 1, 0});
  CHECK(g.features(1, 0) == doctest::Approx(0.5));
  CHECK(g.members[1] == std::vector<std::uint32_t>{0, 1});

  // Base color is the DC term mapped through the SH offset; covariance is in voxel units.
  Gaussian d;
  d.sh[0] = {1.0f, 0.0f, -1.0f};
  d.scale = {0.05f, 0.1f, 0.05f};
  GaussianScene one;
  one.gaussians = {d};
  const SparseGrid h = voxelize(one, 0.05);
  CHECK(h.features(0, 1) == doctest::Approx(0.28209479177387814 + 0.5));
  CHECK(h.features(0, 3) == doctest::Approx(-0.28209479177387814 + 0.5));
  CHECK(h.features(0, 4) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(h.features(0, 7) == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(h.features(0, 5) == doctest::Approx(0.0));

  CHECK(voxelize(GaussianScene{}, 0.05).size() == 0);
  CHECK_THROWS_AS(voxelize(s, 0.0), ContractError);
}

TEST_CASE("every Gaussian belongs to exactly one voxel and coordinates are unique") {
  std::mt19937_64 rng(3);
  const GaussianScene scene = oracle::random_scene(rng, 500, 0.5f);
  const SparseGrid g = voxelize(scene, 0.1);
  std::set<std::array<int, 3>> seen;
  std::size_t members = 0;
  for (std::size_t v = 0; v < g.size(); ++v) {
    CHECK(seen.insert({g.coords[v].x(), g.coords[v].y(), g.coords[v].z()}).second);
    members += g.members[v].size();
    for (auto i : g.members[v]) CHECK(g.voxel_of[i] == v);
  }
  CHECK(members == scene.size());
  CHECK(g.features.cols() == kVoxelFeatures);
}

TEST_CASE("kernel slot offsets") {
  CHECK(KernelMap::offset(0) == Eigen::Vector3i(-1, -1, -1));
  CHECK(KernelMap::offset(13) == Eigen::Vector3i(0, 0, 0));
  CHECK(KernelMap::offset(1) == Eigen::Vector3i(-1, -1, 0));
  CHECK(KernelMap::offset(9) == Eigen::Vector3i(0, -1, -1));
  CHECK(KernelMap::offset(26) == Eigen::Vector3i(1, 1, 1));
}

TEST_CASE("isolated voxel uses only the center taps") {
  GaussianScene s;
  Gaussian g;
  g.opacity = 0.7f;
  s.gaussians = {g};
  const SparseGrid grid = voxelize(s, 0.05);
  const SparseConvNet net = SparseConvNet::initialized(small_arch(0.05), 11);
  const auto& w = net.parameters();
  const auto& arch = net.architecture();

  Eigen::RowVectorXd h = grid.features.row(0);
  int in = arch.input_channels;
  for (std::size_t l = 0; l < arch.conv_widths.size(); ++l) {
    const int out = arch.conv_widths[l];
    Eigen::RowVectorXd next(out);
    for (int q = 0; q < out; ++q) {
      double sum = w[net.conv_bias_offset(l) + static_cast<std::size_t>(q)];
      for (int p = 0; p < in; ++p) sum += h[p] * w[net.conv_kernel_offset(l, 13) + static_cast<std::size_t>(p * out + q)];
      next[q] = std::max(0.0, sum);
    }
    h = next;
    in = out;
  }
  Eigen::RowVectorXd expected(arch.output_channels);
  for (int q = 0; q < arch.output_channels; ++q) {
    double sum = w[net.head_bias_offset() + static_cast<std::size_t>(q)];
    for (int p = 0; p < in; ++p) sum += h[p] * w[net.head_weight_offset() + static_cast<std::size_t>(p * arch.output_channels + q)];
    expected[q] = sum;
  }
  const RowMatrixXd got = net.forward(grid);
  CHECK((got.row(0) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero weights give zero embeddings") {
  std::mt19937_64 rng(5);
  const SparseGrid grid = voxelize(voxel_scene(rng, 30, 6, 0.05), 0.05);
  SparseConvNet net(small_arch(0.05));
  std::fill(net.parameters().begin(), net.parameters().end(), 0.0);
  CHECK(net.forward(grid).isZero());
}

TEST_CASE("forward equals the dense reference convolution") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 4; ++t) {
    const SparseGrid grid = voxelize(voxel_scene(rng, 50, 6, 0.05), 0.05);
    NetArchitecture arch;
    arch.output_channels = 8;
    const SparseConvNet net = SparseConvNet::initialized(arch, 100 + static_cast<std::uint64_t>(t));
    const RowMatrixXd sparse = net.forward(grid);
    const RowMatrixXd dense = oracle::dense_forward(net, grid);
    CHECK((sparse - dense).cwiseAbs().maxCoeff() <= 1e-5);
  }
  SparseConvNet wrong = SparseConvNet::initialized(small_arch(0.05), 1);
  const SparseGrid grid = voxelize(voxel_scene(rng, 5, 4, 0.05), 0.05);
  RowMatrixXd narrow = grid.features.leftCols(4);
  CHECK_THROWS_AS(wrong.forward(narrow, KernelMap::build(grid.coords)), ContractError);
}

TEST_CASE("analytic gradient matches central finite differences") {
  std::mt19937_64 rng(9);
  const SparseGrid grid = voxelize(voxel_scene(rng, 18, 4, 0.05), 0.05);
  const KernelMap kmap = KernelMap::build(grid.coords);
  SparseConvNet net = SparseConvNet::initialized(small_arch(0.05), 21);
  const RowMatrixXd target = random_rows(rng, static_cast<Eigen::Index>(grid.size()), 3);
  std::vector<std::uint8_t> mask(grid.size(), 1);
  mask[2] = 0;

  std::vector<double> grad;
  net.loss_and_gradient(grid.features, kmap, target, mask, grad);
  REQUIRE(grad.size() == net.parameters().size());

  const double h = 1e-5;
  std::vector<double> numeric(grad.size());
  std::vector<double> scratch;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double keep = net.parameters()[i];
    net.parameters()[i] = keep + h;
    const double up = net.loss_and_gradient(grid.features, kmap, target, mask, scratch);
    net.parameters()[i] = keep - h;
    const double down = net.loss_and_gradient(grid.features, kmap, target, mask, scratch);
    net.parameters()[i] = keep;
    numeric[i] = (up - down) / (2 * h);
  }
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    diff += (grad[i] - numeric[i]) * (grad[i] - numeric[i]);
    norm += numeric[i] * numeric[i];
    CHECK(std::abs(grad[i] - numeric[i]) <= 1e-4 * std::max(std::abs(numeric[i]), 1e-3));
  }
  CHECK(std::sqrt(diff / norm) <= 1e-4);
}

TEST_CASE("cosine_loss examples") {
  RowMatrixXd t(2, 2);
  t << 1, 2, -3, 0.5;
  const std::vector<std::uint8_t> all{1, 1};
  CHECK(cosine_loss(t, t, all) == doctest::Approx(0.0));
  CHECK(cosine_loss(-t, t, all) == doctest::Approx(2.0));
  RowMatrixXd ortho(2, 2);
  ortho << -2, 1, 0.5, 3;
  CHECK(cosine_loss(ortho, t, all) == doctest::Approx(1.0));
  // Only masked rows count; a zero prediction uses the clamped norm and costs 1.
  RowMatrixXd half = t;
  half.row(1).setZero();
  CHECK(cosine_loss(half, t, {0, 1}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine_loss(t, t, {0, 0}), ContractError);
}

TEST_CASE("loss is invariant to positive rescaling of targets") {
  std::mt19937_64 rng(13);
  const RowMatrixXd p = random_rows(rng, 20, 6), t = random_rows(rng, 20, 6);
  const std::vector<std::uint8_t> mask(20, 1);
  for (double s : {1e-3, 0.5, 7.0, 1e4}) CHECK(cosine_loss(p, s * t, mask) == doctest::Approx(cosine_loss(p, t, mask)).epsilon(1e-12));
}

TEST_CASE("training overfits a single voxel") {
  GaussianScene s;
  Gaussian g;
  g.opacity = 0.6f;
  g.sh[0] = {0.3f, -0.2f, 0.1f};
  s.gaussians = {g, g};
  std::mt19937_64 rng(17);
  const RowMatrixXd e = random_rows(rng, 1, 16);
  SemanticField target(2, 16);
  target.embeddings.row(0) = e.cast<float>();
  target.counts = {1, 0};

  const TrainResult r = train(SparseConvNet::initialized(NetArchitecture{}, 1), {{&s, &target}}, {200, 0.05, 0.9, 4});
  CHECK(r.loss_trace.size() == 200);
  const SemanticField pred = predict_field(r.net, s);
  CHECK(pred.counts == std::vector<std::uint32_t>{1, 1});
  CHECK(pred.embeddings.row(0) == pred.embeddings.row(1));
  const Eigen::RowVectorXd p = pred.embeddings.row(0).cast<double>();
  CHECK(p.dot(e.row(0)) / (p.norm() * e.row(0).norm()) >= 0.99);
}

TEST_CASE("zero learning rate leaves weights unchanged") {
  std::mt19937_64 rng(19);
  const GaussianScene s = voxel_scene(rng, 20, 5, 0.05);
  const SemanticField target = field_from(random_rows(rng, static_cast<Eigen::Index>(s.size()), 3));
  const SparseConvNet start = SparseConvNet::initialized(small_arch(0.05), 2);
  const TrainResult r = train(start, {{&s, &target}}, {15, 0.0, 0.9, 0});
  CHECK(r.net.parameters() == start.parameters());
  for (double l : r.loss_trace) CHECK(l == r.loss_trace.front());
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
  std::mt19937_64 rng(23);
  const GaussianScene a = voxel_scene(rng, 25, 5, 0.05), b = voxel_scene(rng, 25, 5, 0.05);
  const SemanticField ta = field_from(random_rows(rng, static_cast<Eigen::Index>(a.size()), 3));
  const SemanticField tb = field_from(random_rows(rng, static_cast<Eigen::Index>(b.size()), 3));
  const std::vector<TrainingScene> data{{&a, &ta}, {&b, &tb}};
  const SparseConvNet start = SparseConvNet::initialized(small_arch(0.05), 3);
  const TrainResult r1 = train(start, data, {30, 0.05, 0.9, 8});
  const TrainResult r2 = train(start, data, {30, 0.05, 0.9, 8});
  CHECK(r1.net.parameters() == r2.net.parameters());
  CHECK(r1.loss_trace == r2.loss_trace);
  CHECK(r1.loss_trace.back() < r1.loss_trace.front());

  SemanticField unobserved(a.size(), 3);
  CHECK_THROWS_AS(train(start, {{&a, &unobserved}}, {1, 0.05, 0.9, 0}), ContractError);
  SemanticField short_field(a.size() - 1, 3);
  std::fill(short_field.counts.begin(), short_field.counts.end(), 1u);
  CHECK_THROWS_AS(train(start, {{&a, &short_field}}, {1, 0.05, 0.9, 0}), ContractError);
}

TEST_CASE("translation by whole voxels leaves outputs identical") {
  std::mt19937_64 rng(29);
  const double vs = 0.25; // exact in binary, so shifted positions stay exact
  GaussianScene s = voxel_scene(rng, 40, 5, vs);
  const SparseConvNet net = SparseConvNet::initialized(small_arch(vs), 5);
  const RowMatrixXd before = net.forward(voxelize(s, vs));
  for (auto& g : s.gaussians) g.position += Eigen::Vector3f(0.5f, -0.75f, 1.0f);
  const RowMatrixXd after = net.forward(voxelize(s, vs));
  CHECK(before == after);
}

TEST_CASE("predict_field devoxelizes and handles empty scenes") {
  std::mt19937_64 rng(31);
  const GaussianScene s = voxel_scene(rng, 10, 4, 0.05);
  const SparseConvNet net = SparseConvNet::initialized(small_arch(0.05), 6);
  const SparseGrid grid = voxelize(s, net.architecture().voxel_size);
  const RowMatrixXd out = net.forward(grid);
  const SemanticField f = predict_field(net, s);
  for (std::size_t i = 0; i < s.size(); ++i)
    CHECK(f.embeddings.row(static_cast<Eigen::Index>(i)) == out.row(grid.voxel_of[i]).cast<float>());
  CHECK_FALSE(f.normalized);
  CHECK(predict_field(net, GaussianScene{}).rows() == 0);
}

TEST_CASE("checkpoint round trip stores f32 weights") {
  testing_support::TempDir dir("ckpt");
  const SparseConvNet net = SparseConvNet::initialized(small_arch(0.05), 7);
  save_checkpoint(net, dir / "n.sgnw");
  const SparseConvNet back = load_checkpoint(dir / "n.sgnw");
  CHECK(back.architecture() == net.architecture());
  REQUIRE(back.parameters().size() == net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i)
    CHECK(back.parameters()[i] == static_cast<double>(static_cast<float>(net.parameters()[i])));

  write_loss_csv({0.5, 0.25}, dir / "loss.csv");
  std::ifstream in(dir / "loss.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "epoch,loss");
  CHECK(first.rfind("0,0.5", 0) == 0);

  std::ofstream(dir / "bad.sgnw") << "SGNX";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.sgnw"), FormatError);
}

} // TEST_SUITE
