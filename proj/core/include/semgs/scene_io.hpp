#pragma once

#include <filesystem>
#include <vector>

#include "semgs/scene.hpp"

namespace semgs {

enum class FieldSource { projected2d, predicted3d };

/// Reads a binary little-endian 3DGS PLY and activates the stored values
/// (sigmoid opacity, exp scale, normalized quaternion).
GaussianScene load_ply(const std::filesystem::path& path);

/// Writes only the PLY part of a scene, storing pre-activation values.
void save_ply(const GaussianScene& scene, const std::filesystem::path& path);

/// PLY plus one "SGSF" sidecar per attached semantic field.
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);

/// load_ply plus any sidecar fields found next to the PLY.
GaussianScene load_scene(const std::filesystem::path& path);

/// `scene.ply` -> `scene.sem2d.sgsf` / `scene.sem3d.sgsf`.
std::filesystem::path sidecar_path(const std::filesystem::path& ply_path, FieldSource source);

/// Pre-activation value v with sigmoid(v) == o exactly (when o is in the image of sigmoid).
float stored_opacity(float opacity);
/// Pre-activation value v with exp(v) == s exactly (when s is in the image of exp).
float stored_log_scale(float scale);
float activate_log_scale(float stored);

std::vector<Camera> load_cameras(const std::filesystem::path& path);
void save_cameras(const std::vector<Camera>& cameras, const std::filesystem::path& path);

SemanticField read_field(const std::filesystem::path& path);
void write_field(const SemanticField& field, const std::filesystem::path& path);

} // namespace semgs
