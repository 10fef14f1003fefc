#include "semgs/scene_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "semgs/errors.hpp"

namespace semgs {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kFieldVersion = 1;

struct PlyProperty {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool is_float32 = false;
};

std::size_t ply_type_size(const std::string& type) {
  static const std::map<std::string, std::size_t> sizes = {
      {"char", 1},  {"uchar", 1},  {"int8", 1},   {"uint8", 1},  {"short", 2},   {"ushort", 2},
      {"int16", 2}, {"uint16", 2}, {"int", 4},    {"uint", 4},   {"int32", 4},   {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  const auto it = sizes.find(type);
  return it == sizes.end() ? 0 : it->second;
}

struct PlyHeader {
  std::size_t vertex_count = 0;
  std::size_t stride = 0;
  std::size_t data_offset = 0;
  std::vector<PlyProperty> properties;

  const PlyProperty& require(const std::string& name, const std::string& file) const {
    for (const auto& p : properties) {
      if (p.name == name) {
        if (!p.is_float32) throw FormatError(file + ": property '" + name + "' must be float32");
        return p;
      }
    }
    throw FormatError(file + ": missing vertex property '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& p : properties)
      if (p.name == name) return true;
    return false;
  }
};

PlyHeader parse_ply_header(const std::vector<char>& bytes, const std::string& file) {
  const std::string_view view(bytes.data(), bytes.size());
  const std::string_view terminator = "end_header\n";
  const auto end = view.find(terminator);
  if (view.substr(0, 4) != "ply\n" || end == std::string_view::npos) throw FormatError(file + ": not a PLY file");

  PlyHeader header;
  header.data_offset = end + terminator.size();
  std::istringstream lines(std::string(view.substr(0, end)));
  std::string line;
  bool in_vertex = false;
  bool seen_vertex = false;
  bool format_ok = false;
  while (std::getline(lines, line)) {
    std::istringstream tok(line);
    std::string keyword;
    tok >> keyword;
    if (keyword == "format") {
      std::string fmt;
      tok >> fmt;
      if (fmt != "binary_little_endian") throw FormatError(file + ": unsupported PLY format '" + fmt + "'");
      format_ok = true;
    } else if (keyword == "element") {
      std::string name;
      std::size_t count = 0;
      tok >> name >> count;
      if (name == "vertex") {
        if (seen_vertex) throw FormatError(file + ": duplicate vertex element");
        header.vertex_count = count;
        in_vertex = true;
        seen_vertex = true;
      } else {
        if (!seen_vertex) throw FormatError(file + ": vertex must be the first element");
        in_vertex = false;
      }
    } else if (keyword == "property" && in_vertex) {
      std::string type, name;
      tok >> type;
      if (type == "list") throw FormatError(file + ": list properties are not supported on vertices");
      tok >> name;
      const std::size_t size = ply_type_size(type);
      if (size == 0) throw FormatError(file + ": unknown property type '" + type + "'");
      header.properties.push_back({name, header.stride, size, type == "float" || type == "float32"});
      header.stride += size;
    }
  }
  if (!format_ok) throw FormatError(file + ": missing format line");
  if (!seen_vertex) throw FormatError(file + ": missing vertex element");
  return header;
}

int sh_degree_from_rest(std::size_t rest_count, const std::string& file) {
  for (int d = 0; d <= kMaxShDegree; ++d)
    if (rest_count == static_cast<std::size_t>(3 * (sh_coeff_count(d) - 1))) return d;
  throw FormatError(file + ": " + std::to_string(rest_count) + " f_rest properties do not match SH degree 0-3");
}

std::string ply_header_text(std::size_t count, int degree) {
  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << count << "\n";
  for (const char* n : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"}) h << "property float " << n << "\n";
  const int rest = 3 * (sh_coeff_count(degree) - 1);
  for (int i = 0; i < rest; ++i) h << "property float f_rest_" << i << "\n";
  h << "property float opacity\n";
  for (const char* n : {"scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    h << "property float " << n << "\n";
  h << "end_header\n";
  return h.str();
}

/// Walks float neighbours of `guess` until `forward(v) == target`.
template <typename Forward>
float invert_exactly(float target, float guess, Forward forward) {
  if (!std::isfinite(guess)) return guess;
  if (forward(guess) == target) return guess;
  const float dir = forward(guess) < target ? std::numeric_limits<float>::infinity()
                                            : -std::numeric_limits<float>::infinity();
  float v = guess;
  for (int step = 0; step < 256; ++step) {
    v = std::nextafter(v, dir);
    const float f = forward(v);
    if (f == target) return v;
    if ((dir > 0 && f > target) || (dir < 0 && f < target)) break;
  }
  return guess;
}

Eigen::Vector4f normalize_quaternion(const Eigen::Vector4f& raw, std::size_t index, const std::string& file) {
  const double norm = raw.cast<double>().norm();
  if (!(norm > 0.0)) throw DataError(file + ": zero quaternion at vertex " + std::to_string(index));
  // Quaternions that already satisfy the unit-norm invariant are kept bit-for-bit so save/load is lossless.
  if (std::abs(norm - 1.0) <= 1e-6) return raw;
  return (raw.cast<double>() / norm).cast<float>();
}

} // namespace

float activate_log_scale(float stored) { return static_cast<float>(std::exp(static_cast<double>(stored))); }

float stored_opacity(float opacity) {
  // sigmoid saturates to exactly 0/1 in float well inside these bounds
  if (opacity >= 1.0f) return 20.0f;
  if (opacity <= 0.0f) return -120.0f;
  return invert_exactly(opacity, logit(opacity), sigmoid);
}

float stored_log_scale(float scale) {
  return invert_exactly(scale, static_cast<float>(std::log(static_cast<double>(scale))), activate_log_scale);
}

GaussianScene load_ply(const fs::path& path) {
  const std::string file = path.string();
  const auto bytes = detail::read_file(path);
  const PlyHeader header = parse_ply_header(bytes, file);

  std::size_t rest_count = 0;
  while (header.has("f_rest_" + std::to_string(rest_count))) ++rest_count;

  GaussianScene scene;
  scene.sh_degree = sh_degree_from_rest(rest_count, file);
  const int coeffs = sh_coeff_count(scene.sh_degree);

  const auto prop = [&](const std::string& name) { return header.require(name, file).offset; };
  const std::size_t px = prop("x"), py = prop("y"), pz = prop("z");
  const std::size_t dc[3] = {prop("f_dc_0"), prop("f_dc_1"), prop("f_dc_2")};
  std::vector<std::size_t> rest(rest_count);
  for (std::size_t i = 0; i < rest_count; ++i) rest[i] = prop("f_rest_" + std::to_string(i));
  const std::size_t op = prop("opacity");
  const std::size_t sc[3] = {prop("scale_0"), prop("scale_1"), prop("scale_2")};
  const std::size_t rot[4] = {prop("rot_0"), prop("rot_1"), prop("rot_2"), prop("rot_3")};

  const std::size_t needed = header.data_offset + header.vertex_count * header.stride;
  if (bytes.size() < needed) {
    throw FormatError(file + ": truncated vertex data (need " + std::to_string(needed) + " bytes, have " +
                      std::to_string(bytes.size()) + ")");
  }

  scene.gaussians.resize(header.vertex_count);
  for (std::size_t i = 0; i < header.vertex_count; ++i) {
    const char* rec = bytes.data() + header.data_offset + i * header.stride;
    const auto f = [&](std::size_t off) {
      float v;
      std::memcpy(&v, rec + off, sizeof v);
      if (!std::isfinite(v)) throw DataError(file + ": non-finite value at vertex " + std::to_string(i));
      return v;
    };
    Gaussian& g = scene.gaussians[i];
    g.position = {f(px), f(py), f(pz)};
    for (int c = 0; c < 3; ++c) g.sh[0][c] = f(dc[c]);
    // f_rest is channel-major: all coefficients of R, then G, then B.
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < coeffs; ++k)
        g.sh[static_cast<std::size_t>(k)][c] = f(rest[static_cast<std::size_t>(c * (coeffs - 1) + (k - 1))]);
    g.opacity = sigmoid(f(op));
    for (int a = 0; a < 3; ++a) g.scale[a] = activate_log_scale(f(sc[a]));
    if ((g.scale.array() <= 0.0f).any() || !g.scale.allFinite())
      throw DataError(file + ": scale underflow/overflow at vertex " + std::to_string(i));
    g.rotation = normalize_quaternion({f(rot[0]), f(rot[1]), f(rot[2]), f(rot[3])}, i, file);
  }
  return scene;
}

void save_ply(const GaussianScene& scene, const fs::path& path) {
  const int coeffs = sh_coeff_count(scene.sh_degree);
  detail::ByteWriter w;
  w.write_bytes(ply_header_text(scene.size(), scene.sh_degree));
  for (const Gaussian& g : scene.gaussians) {
    for (int a = 0; a < 3; ++a) w.write(g.position[a]);
    for (int a = 0; a < 3; ++a) w.write(0.0f);
    for (int c = 0; c < 3; ++c) w.write(g.sh[0][c]);
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < coeffs; ++k) w.write(g.sh[static_cast<std::size_t>(k)][c]);
    w.write(stored_opacity(g.opacity));
    for (int a = 0; a < 3; ++a) w.write(stored_log_scale(g.scale[a]));
    for (int a = 0; a < 4; ++a) w.write(g.rotation[a]);
  }
  w.save(path);
}

fs::path sidecar_path(const fs::path& ply_path, FieldSource source) {
  fs::path p = ply_path;
  p.replace_extension(source == FieldSource::projected2d ? ".sem2d.sgsf" : ".sem3d.sgsf");
  return p;
}

void save_scene(const GaussianScene& scene, const fs::path& path) {
  scene.validate();
  save_ply(scene, path);
  const std::pair<const std::optional<SemanticField>*, FieldSource> fields[] = {
      {&scene.semantic2d, FieldSource::projected2d}, {&scene.semantic3d, FieldSource::predicted3d}};
  for (const auto& [field, source] : fields) {
    const fs::path side = sidecar_path(path, source);
    if (field->has_value()) {
      write_field(**field, side);
    } else if (fs::exists(side)) {
      fs::remove(side);
    }
  }
}

GaussianScene load_scene(const fs::path& path) {
  GaussianScene scene = load_ply(path);
  if (const auto p = sidecar_path(path, FieldSource::projected2d); fs::exists(p)) scene.semantic2d = read_field(p);
  if (const auto p = sidecar_path(path, FieldSource::predicted3d); fs::exists(p)) scene.semantic3d = read_field(p);
  scene.validate();
  return scene;
}

std::vector<Camera> load_cameras(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw FormatError(path.string() + ": camera file must be a JSON array");

  std::vector<Camera> cameras;
  cameras.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& j = doc[i];
    const std::string where = path.string() + ": camera " + std::to_string(i);
    Camera cam;
    try {
      cam.width = j.at("width").get<int>();
      cam.height = j.at("height").get<int>();
      cam.fx = j.at("fx").get<double>();
      cam.fy = j.at("fy").get<double>();
      cam.cx = j.at("cx").get<double>();
      cam.cy = j.at("cy").get<double>();
      const auto& m = j.at("world_to_camera");
      if (!m.is_array() || m.size() != 16) throw FormatError(where + ": world_to_camera must hold 16 numbers");
      for (int k = 0; k < 16; ++k) cam.world_to_camera(k / 4, k % 4) = m[static_cast<std::size_t>(k)].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    try {
      cam.validate();
    } catch (const DataError& e) {
      throw FormatError(where + ": " + e.what());
    }
    cameras.push_back(cam);
  }
  return cameras;
}

void save_cameras(const std::vector<Camera>& cameras, const fs::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const Camera& c : cameras) {
    nlohmann::json m = nlohmann::json::array();
    for (int k = 0; k < 16; ++k) m.push_back(c.world_to_camera(k / 4, k % 4));
    doc.push_back({{"width", c.width}, {"height", c.height}, {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx},
                   {"cy", c.cy}, {"world_to_camera", m}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(1) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

SemanticField read_field(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path.string());
  if (r.read_magic(4) != "SGSF") throw FormatError(path.string() + ": bad magic (expected SGSF)");
  const auto version = r.read<std::uint32_t>("version");
  if (version != kFieldVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const auto n = r.read<std::uint32_t>("row count");
  const auto c = r.read<std::uint32_t>("channel count");
  const auto dtype = r.read<std::uint8_t>("dtype");
  const auto normalized = r.read<std::uint8_t>("normalized flag");
  if (dtype != 0) throw FormatError(path.string() + ": unsupported dtype " + std::to_string(dtype));
  if (normalized > 1) throw FormatError(path.string() + ": normalized flag must be 0 or 1");
  r.skip_to_alignment(8);

  SemanticField field(n, c);
  field.normalized = normalized == 1;
  r.read_array(std::span<float>(field.embeddings.data(), static_cast<std::size_t>(n) * c), "embeddings");
  r.read_array(std::span<std::uint32_t>(field.counts), "counts");
  r.expect_end();
  try {
    field.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return field;
}

void write_field(const SemanticField& field, const fs::path& path) {
  field.validate();
  detail::ByteWriter w;
  w.write_bytes("SGSF");
  w.write(kFieldVersion);
  w.write(static_cast<std::uint32_t>(field.rows()));
  w.write(static_cast<std::uint32_t>(field.channels()));
  w.write(std::uint8_t{0});
  w.write(static_cast<std::uint8_t>(field.normalized ? 1 : 0));
  w.pad_to(8);
  w.write_array(std::span<const float>(field.embeddings.data(), static_cast<std::size_t>(field.embeddings.size())));
  w.write_array(std::span<const std::uint32_t>(field.counts));
  w.save(path);
}

} // namespace semgs
