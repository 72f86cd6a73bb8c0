#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "meshsplat/types.hpp"

namespace meshsplat {

using Face = std::array<int, 3>;

class MeshError : public Error {
 public:
  using Error::Error;
};

/// Undirected edge (i < j) with its clamped cotangent weight.
struct Edge {
  int i = 0;
  int j = 0;
  double cot_weight = 0.0;
};

/// Per-face data for orthogonal projection onto the face plane. For a point x,
/// s = (x - origin) . du and t = (x - origin) . dv give barycentrics (1-s-t, s, t).
/// du, dv are the rows of the pseudo-inverse of [v2-v1, v3-v1].
struct ProjectionFrame {
  double origin[3];
  double du[3];
  double dv[3];
};

inline constexpr double kMinFaceArea = 1e-12;
inline constexpr double kMinCotWeight = 1e-3;
inline constexpr double kMaxCotWeight = 1e3;

/// Triangle mesh with derived geometry. Topology and cotangent weights are fixed at
/// construction; vertex positions may be replaced with set_vertices(), which
/// refreshes normals, areas and projection frames.
class TriangleMesh {
 public:
  TriangleMesh() = default;

  /// Validates indices and areas, then derives everything. Throws MeshError naming
  /// the offending face.
  TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces);

  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }
  bool empty() const { return faces_.empty(); }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  /// Positions at construction; cotangent weights are derived from these.
  const std::vector<Vec3>& rest_vertices() const { return rest_; }
  const std::vector<Face>& faces() const { return faces_; }
  const Vec3& vertex(int v) const { return vertices_[static_cast<std::size_t>(v)]; }
  const Face& face(int f) const { return faces_[static_cast<std::size_t>(f)]; }
  std::array<Vec3, 3> corners(int f) const;

  const Vec3& face_normal(int f) const { return normals_[static_cast<std::size_t>(f)]; }
  double face_area(int f) const { return areas_[static_cast<std::size_t>(f)]; }
  const std::vector<Vec3>& face_normals() const { return normals_; }
  const std::vector<double>& face_areas() const { return areas_; }
  const ProjectionFrame& projection_frame(int f) const { return frames_[static_cast<std::size_t>(f)]; }
  const std::vector<ProjectionFrame>& projection_frames() const { return frames_; }

  /// Faces sharing at least one vertex with f, ascending ids, f excluded.
  std::span<const int> adjacent_faces(int f) const;
  std::span<const int> vertex_faces(int v) const;

  const std::vector<Edge>& edges() const { return edges_; }
  /// Pairs of faces sharing an edge.
  const std::vector<std::array<int, 2>>& edge_face_pairs() const { return edge_pairs_; }

  /// Replace vertex positions (same count). Near-degenerate faces produced by
  /// optimization get a guarded normal instead of an error.
  void set_vertices(std::vector<Vec3> vertices);

  bool has_skin_weights() const { return bone_count_ > 0; }
  int bone_count() const { return bone_count_; }
  std::span<const double> skin_weights(int v) const {
    return {skin_.data() + static_cast<std::size_t>(v) * static_cast<std::size_t>(bone_count_),
            static_cast<std::size_t>(bone_count_)};
  }
  const std::vector<double>& skin_weight_table() const { return skin_; }
  /// Row-major vertex_count x bones table. Throws MeshError if a row is negative or
  /// does not sum to 1 within 1e-6.
  void set_skin_weights(std::vector<double> table, int bones);

  double mean_edge_length() const;
  double median_edge_length() const;
  void bounding_box(Vec3& lo, Vec3& hi) const;

 private:
  void derive_geometry();
  void derive_topology();

  std::vector<Vec3> vertices_;
  std::vector<Vec3> rest_;
  std::vector<Face> faces_;
  std::vector<Vec3> normals_;
  std::vector<double> areas_;
  std::vector<ProjectionFrame> frames_;
  std::vector<int> vf_offsets_, vf_ids_;
  std::vector<int> adj_offsets_, adj_ids_;
  std::vector<Edge> edges_;
  std::vector<std::array<int, 2>> edge_pairs_;
  std::vector<double> skin_;
  int bone_count_ = 0;
};

/// Normalized (v2 - v1) x (v3 - v1).
Vec3 face_normal(const TriangleMesh& mesh, int f);
std::vector<int> adjacency_set(const TriangleMesh& mesh, int f);

/// Line segment between two joints, used to derive default skin weights.
struct BoneSegment {
  Vec3 head;
  Vec3 tail;
};

/// Inverse-distance skin weights: w_b proportional to 1 / dist(v, segment_b)^power,
/// renormalized per vertex.
std::vector<double> inverse_distance_skin_weights(const std::vector<Vec3>& vertices,
                                                  std::span<const BoneSegment> bones,
                                                  double power = 4.0);

/// Scalar value and per-vertex gradient of a mesh energy.
struct MeshLoss {
  double value = 0.0;
  std::vector<Vec3> grad;
};

/// Per vertex: sum_j w_ij (v_j - v_i) / sum_j w_ij (zero for isolated vertices).
std::vector<Vec3> laplacian_offsets(const TriangleMesh& mesh);
/// Sum over vertices of the squared normalized cotangent-Laplacian offset.
MeshLoss laplacian_loss(const TriangleMesh& mesh);
/// Mean over edge-adjacent face pairs of 1 - <n_f, n_g>.
MeshLoss normal_smoothness_loss(const TriangleMesh& mesh);

}  // namespace meshsplat
