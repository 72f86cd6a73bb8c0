#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "meshsplat/mesh.hpp"

namespace meshsplat {

/// Loads an ASCII OBJ (v/f records, 1-based, polygons fan-triangulated) or a PLY
/// (binary little-endian or ASCII) by extension. When weights_path is given the
/// skin-weight sidecar is attached. Errors carry the line, face or vertex id.
TriangleMesh load_mesh(const std::filesystem::path& path,
                       const std::optional<std::filesystem::path>& weights_path = std::nullopt);

TriangleMesh load_obj(const std::filesystem::path& path);
TriangleMesh load_ply(const std::filesystem::path& path);

void save_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
/// Binary little-endian PLY with double vertices and int32 face lists.
void save_ply(const TriangleMesh& mesh, const std::filesystem::path& path);
/// Writes OBJ or PLY by extension.
void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Sidecar format: line 1 holds the bone count B, then one line of B floats per vertex.
struct SkinWeightTable {
  int bones = 0;
  std::vector<double> weights;  // vertex-major
};
SkinWeightTable load_skin_weights(const std::filesystem::path& path);
void save_skin_weights(const TriangleMesh& mesh, const std::filesystem::path& path);

}  // namespace meshsplat
