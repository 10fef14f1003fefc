#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "oracles.hpp"
#include "semgs/errors.hpp"
#include "semgs/scene.hpp"
#include "semgs/scene_io.hpp"
#include "temp_dir.hpp"

using namespace semgs;
using testing_support::TempDir;

namespace {

/// Hand-rolled minimal 3DGS PLY writer so the loader is checked against an independent encoder.
void write_raw_ply(const std::filesystem::path& path, const std::vector<std::string>& props,
                   const std::vector<std::vector<float>>& rows) {
  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << rows.size() << "\n";
  for (const auto& p : props) h << "property float " << p << "\n";
  h << "end_header\n";
  std::ofstream out(path, std::ios::binary);
  out << h.str();
  for (const auto& r : rows) out.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size() * 4));
}

std::vector<std::string> base_props() {
  return {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
          "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"};
}

Eigen::Matrix3d explicit_covariance(const Eigen::Vector4d& q, const Eigen::Vector3d& s) {
  const Eigen::Vector4d n = q / q.norm();
  const double w = n[0], x = n[1], y = n[2], z = n[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  const Eigen::Matrix3d m = r * s.asDiagonal();
  return m * m.transpose();
}

} // namespace

TEST_SUITE("scene_model") {

TEST_CASE("load_ply activates stored opacity and scale") {
  TempDir dir("scene_activate");
  write_raw_ply(dir / "one.ply", base_props(), {{1, 2, 3, 0, 0, 0, 0.1f, 0.2f, 0.3f, 0.0f, 0, 0, 0, 2, 0, 0, 0}});
  const GaussianScene s = load_ply(dir / "one.ply");
  REQUIRE(s.size() == 1);
  CHECK(s.gaussians[0].opacity == 0.5f);
  CHECK(s.gaussians[0].scale == Eigen::Vector3f(1, 1, 1));
  CHECK(s.gaussians[0].rotation == Eigen::Vector4f(1, 0, 0, 0));
  CHECK(s.gaussians[0].position == Eigen::Vector3f(1, 2, 3));
  CHECK(s.sh_degree == 0);
}

TEST_CASE("load_ply names a missing property") {
  TempDir dir("scene_missing");
  auto props = base_props();
  props.erase(std::find(props.begin(), props.end(), "scale_1"));
  write_raw_ply(dir / "bad.ply", props, {std::vector<float>(props.size(), 0.0f)});
  try {
    load_ply(dir / "bad.ply");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("scale_1") != std::string::npos);
  }
}

TEST_CASE("load_ply reports the index of a non-finite vertex") {
  TempDir dir("scene_nonfinite");
  std::vector<float> ok(base_props().size(), 0.0f);
  ok[13] = 1.0f;
  auto bad = ok;
  bad[1] = std::numeric_limits<float>::quiet_NaN();
  write_raw_ply(dir / "nan.ply", base_props(), {ok, ok, bad});
  try {
    load_ply(dir / "nan.ply");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("save_scene then load_ply reproduces activated parameters bit-exactly") {
  TempDir dir("scene_roundtrip");
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int degree = 0; degree <= 3; ++degree) {
    // Activated values produced by the loader's own activation of random stored values.
    GaussianScene scene;
    scene.sh_degree = degree;
    for (int i = 0; i < 100; ++i) {
      Gaussian g;
      g.position = Eigen::Vector3f(u(rng), u(rng), u(rng)) * 5.0f;
      g.rotation = oracle::random_unit_quaternion(rng);
      for (int a = 0; a < 3; ++a) g.scale[a] = activate_log_scale(u(rng) * 6.0f - 2.0f);
      g.opacity = sigmoid(u(rng) * 12.0f);
      for (int k = 0; k < sh_coeff_count(degree); ++k) g.sh[static_cast<std::size_t>(k)] = Eigen::Vector3f(u(rng), u(rng), u(rng));
      scene.gaussians.push_back(g);
    }
    save_scene(scene, dir / "r.ply");
    const GaussianScene back = load_ply(dir / "r.ply");
    REQUIRE(back.size() == scene.size());
    CHECK(back.sh_degree == degree);
    for (std::size_t i = 0; i < scene.size(); ++i) {
      const auto& a = scene.gaussians[i];
      const auto& b = back.gaussians[i];
      CHECK(std::memcmp(a.position.data(), b.position.data(), 12) == 0);
      CHECK(std::memcmp(a.scale.data(), b.scale.data(), 12) == 0);
      CHECK(std::memcmp(&a.opacity, &b.opacity, 4) == 0);
      CHECK(std::memcmp(a.rotation.data(), b.rotation.data(), 16) == 0);
      for (int k = 0; k < kMaxShCoeffs; ++k)
        CHECK(std::memcmp(a.sh[static_cast<std::size_t>(k)].data(), b.sh[static_cast<std::size_t>(k)].data(), 12) == 0);
    }
  }
}

TEST_CASE("empty scene saves as a valid zero-vertex PLY") {
  TempDir dir("scene_empty");
  save_scene(GaussianScene{}, dir / "e.ply");
  CHECK(load_ply(dir / "e.ply").size() == 0);
}

TEST_CASE("semantic sidecar round trip keeps rows aligned") {
  TempDir dir("scene_sidecar");
  std::mt19937_64 rng(3);
  GaussianScene scene = oracle::random_scene(rng, 7);
  SemanticField f(7, 16);
  for (int i = 0; i < 7; i += 2) {
    f.embeddings.row(i).setRandom();
    f.counts[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i + 1);
  }
  scene.semantic2d = f;
  save_scene(scene, dir / "s.ply");
  CHECK(std::filesystem::exists(dir / "s.sem2d.sgsf"));
  CHECK_FALSE(std::filesystem::exists(dir / "s.sem3d.sgsf"));

  // Header layout checked byte by byte.
  std::ifstream in(dir / "s.sem2d.sgsf", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() == 24 + 7 * 16 * 4 + 7 * 4);
  CHECK(std::string(bytes.data(), 4) == "SGSF");
  std::uint32_t hdr[3];
  std::memcpy(hdr, bytes.data() + 4, 12);
  CHECK(hdr[0] == 1u);
  CHECK(hdr[1] == 7u);
  CHECK(hdr[2] == 16u);

  const GaussianScene back = load_scene(dir / "s.ply");
  REQUIRE(back.semantic2d);
  CHECK(back.semantic2d->embeddings == f.embeddings);
  CHECK(back.semantic2d->counts == f.counts);
  CHECK_FALSE(back.semantic3d);
}

TEST_CASE("semantic field invariants") {
  SemanticField f(2, 3);
  f.embeddings(0, 0) = 1.0f;
  CHECK_THROWS_AS(f.validate(), DataError); // nonzero row with count 0
  f.counts[0] = 1;
  CHECK_NOTHROW(f.validate());
  f.normalized = true;
  f.embeddings(0, 1) = 1.0f;
  CHECK_THROWS_AS(f.validate(), DataError);
}

TEST_CASE("covariance examples") {
  Gaussian g;
  g.scale = {1, 2, 3};
  CHECK(covariance_d(g).isApprox(Eigen::Vector3d(1, 4, 9).asDiagonal().toDenseMatrix(), 1e-12));

  const float h = std::sqrt(0.5f);
  g.rotation = {h, 0, 0, h};
  const Eigen::Matrix3d expected = explicit_covariance(g.rotation.cast<double>(), g.scale.cast<double>());
  CHECK((covariance_d(g) - expected).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((covariance_d(g) - Eigen::Vector3d(4, 1, 9).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((covariance(g).cast<double>() - expected).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("covariance matches the explicit product and has squared-scale eigenvalues") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.01f, 3.0f);
  for (int i = 0; i < 2000; ++i) {
    Gaussian g;
    g.rotation = oracle::random_unit_quaternion(rng);
    g.scale = {u(rng), u(rng), u(rng)};
    const Eigen::Matrix3d c = covariance_d(g);
    CHECK(c.isApprox(c.transpose(), 0.0));
    CHECK((c - explicit_covariance(g.rotation.cast<double>(), g.scale.cast<double>())).norm() < 1e-9 * c.norm() + 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(c);
    Eigen::Vector3d sq = g.scale.cast<double>().cwiseAbs2();
    std::sort(sq.data(), sq.data() + 3);
    for (int a = 0; a < 3; ++a) CHECK(std::abs(es.eigenvalues()[a] - sq[a]) <= 1e-6 * sq[a]);
  }
}

TEST_CASE("activation pairs are mutually inverse on the representable range") {
  for (float x = -15.0f; x <= 15.0f; x += 0.37f) {
    // Near |x| = 15 sigmoid sits within a few ulps of 1, so compare in probability space there.
    if (std::abs(x) <= 8.0f) CHECK(logit(sigmoid(x)) == doctest::Approx(x).epsilon(1e-4));
    CHECK(std::abs(sigmoid(logit(sigmoid(x))) - sigmoid(x)) <= 2.0f * std::numeric_limits<float>::epsilon());
    CHECK(sigmoid(stored_opacity(sigmoid(x))) == sigmoid(x));
    const float s = std::exp(x * 0.5f);
    CHECK(activate_log_scale(stored_log_scale(s)) == s);
  }
}

TEST_CASE("camera loading") {
  TempDir dir("cameras");
  using nlohmann::json;
  const auto cam_json = [](double scale) {
    json c{{"width", 100}, {"height", 100}, {"fx", 100.0}, {"fy", 100.0}, {"cx", 50.0}, {"cy", 50.0}};
    c["world_to_camera"] = {scale, 0, 0, 0, 0, scale, 0, 0, 0, 0, scale, 0, 0, 0, 0, 1};
    return c;
  };
  {
    std::ofstream(dir / "ok.json") << json::array({cam_json(1.0)}).dump();
    const auto cams = load_cameras(dir / "ok.json");
    REQUIRE(cams.size() == 1);
    CHECK(cams[0].fx == 100.0);
    CHECK(cams[0].world_to_camera.isIdentity());
  }
  {
    std::ofstream(dir / "scaled.json") << json::array({cam_json(1.0), cam_json(1.1)}).dump();
    try {
      load_cameras(dir / "scaled.json");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
  }
  {
    std::mt19937_64 rng(9);
    std::vector<Camera> cams;
    for (int i = 0; i < 20; ++i) cams.push_back(oracle::random_camera(rng, 64 + i, 48));
    save_cameras(cams, dir / "twenty.json");
    const auto back = load_cameras(dir / "twenty.json");
    REQUIRE(back.size() == 20);
    for (int i = 0; i < 20; ++i) {
      CHECK(back[static_cast<std::size_t>(i)].width == 64 + i);
      CHECK(back[static_cast<std::size_t>(i)].world_to_camera == cams[static_cast<std::size_t>(i)].world_to_camera);
    }
  }
}

TEST_CASE("camera invariants") {
  Camera c;
  c.width = 100;
  c.height = 80;
  c.fx = c.fy = 50;
  c.cx = 50;
  c.cy = 40;
  CHECK_NOTHROW(c.validate());
  c.cx = 100;
  CHECK_THROWS_AS(c.validate(), DataError);
  c.cx = 50;
  c.fy = 0;
  CHECK_THROWS_AS(c.validate(), DataError);
}

TEST_CASE("look_at_camera puts the target on the principal point") {
  const Camera c = look_at_camera({3, 1, 2}, {0, 0, 0}, {0, 0, 1}, 64, 48, 50, 50);
  const Eigen::Vector3d t = c.to_camera(Eigen::Vector3d::Zero());
  CHECK(t.z() > 0);
  CHECK(std::abs(t.x()) < 1e-12);
  CHECK(std::abs(t.y()) < 1e-12);
  CHECK((c.center() - Eigen::Vector3d(3, 1, 2)).norm() < 1e-12);
}

} // TEST_SUITE
