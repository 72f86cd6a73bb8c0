#pragma once

#include <span>

#include "meshsplat/mesh.hpp"

namespace meshsplat {

/// Barycentric coordinates (a1, a2, a3) with respect to a face's (v1, v2, v3).
struct Barycentric {
  double a1 = 1.0;
  double a2 = 0.0;
  double a3 = 0.0;

  double sum() const { return a1 + a2 + a3; }
  double operator[](int k) const { return k == 0 ? a1 : (k == 1 ? a2 : a3); }
  Vec3 vec() const { return {a1, a2, a3}; }
  static Barycentric from(const Vec3& a) { return {a.x(), a.y(), a.z()}; }
};

/// Connection between a Gaussian and its mesh triangle.
struct BindingRecord {
  int face = 0;
  Barycentric bary;
  /// Distance along the face normal from the foot point to the Gaussian center.
  double signed_height = 0.0;
};

/// Barycentrics of the orthogonal foot point of x on the plane of face f. Components
/// may be negative; they sum to one.
Barycentric project_to_triangle(const Vec3& x, const TriangleMesh& mesh, int f);

/// True iff any normalized component is negative. Throws std::invalid_argument for a
/// zero-sum input.
bool out_of_triangle(const Barycentric& a);

/// Clamp each component to [0, 1], then renormalize onto the simplex.
Barycentric retract(const Barycentric& a);

/// Voronoi region of a triangle that holds the closest point.
enum class TriangleRegion { Interior, Vertex1, Vertex2, Vertex3, Edge12, Edge13, Edge23 };

struct ClosestPoint {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  /// Barycentrics of `point` (always inside the closed simplex).
  Barycentric weights;
  TriangleRegion region = TriangleRegion::Interior;
};

/// Exact closest point on the closed triangle (v1, v2, v3) by region classification.
ClosestPoint closest_point_on_triangle(const Vec3& x, const Vec3& v1, const Vec3& v2, const Vec3& v3);
ClosestPoint point_triangle_distance(const Vec3& x, const TriangleMesh& mesh, int f);

/// One hop of mesh walking: keeps f_current while x projects inside it, otherwise the
/// nearest face among f_current and its vertex-sharing neighbours (ties -> lowest id).
int walk_to_nearest(const Vec3& x, const TriangleMesh& mesh, int f_current);

struct WalkStats {
  std::size_t outside = 0;  // Gaussians that projected outside their face
  std::size_t moved = 0;    // Gaussians whose face changed
};

/// Applies walk_to_nearest to every Gaussian and refreshes bary and signed_height.
/// Uses the active SIMD kernel for the projection pass and parallel_for for the rest.
WalkStats walk_batch(std::span<const Vec3> centers, const TriangleMesh& mesh, std::span<BindingRecord> bindings);

/// Nearest face over the whole mesh (ties -> lowest id). Baseline and test oracle.
int nearest_face_exhaustive(const Vec3& x, const TriangleMesh& mesh);

}  // namespace meshsplat
