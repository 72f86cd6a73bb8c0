#include <cmath>
#include <limits>

#include "meshsplat/mesh.hpp"

namespace meshsplat {

namespace {

// normalized cotangent-weighted offsets plus the per-vertex weight totals
std::vector<Vec3> offsets(const TriangleMesh& mesh, std::vector<double>& total) {
  const std::size_t nv = mesh.vertex_count();
  const auto& verts = mesh.vertices();
  std::vector<Vec3> offset(nv, Vec3::Zero());
  total.assign(nv, 0.0);
  for (const Edge& e : mesh.edges()) {
    const Vec3 d = verts[e.j] - verts[e.i];
    offset[e.i] += e.cot_weight * d;
    offset[e.j] -= e.cot_weight * d;
    total[e.i] += e.cot_weight;
    total[e.j] += e.cot_weight;
  }
  for (std::size_t v = 0; v < nv; ++v)
    if (total[v] > 0.0) offset[v] /= total[v];
  return offset;
}

}  // namespace

std::vector<Vec3> laplacian_offsets(const TriangleMesh& mesh) {
  std::vector<double> total;
  return offsets(mesh, total);
}

MeshLoss laplacian_loss(const TriangleMesh& mesh) {
  const std::size_t nv = mesh.vertex_count();
  std::vector<double> total;
  const std::vector<Vec3> offset = offsets(mesh, total);

  MeshLoss out;
  out.grad.assign(nv, Vec3::Zero());
  for (std::size_t v = 0; v < nv; ++v) {
    if (total[v] <= 0.0) continue;
    out.value += offset[v].squaredNorm();
    // d offset_i / d v_i = -I because the normalized weights sum to one
    out.grad[v] -= 2.0 * offset[v];
  }
  for (const Edge& e : mesh.edges()) {
    out.grad[e.j] += 2.0 * e.cot_weight / total[e.i] * offset[e.i];
    out.grad[e.i] += 2.0 * e.cot_weight / total[e.j] * offset[e.j];
  }
  return out;
}

MeshLoss normal_smoothness_loss(const TriangleMesh& mesh) {
  MeshLoss out;
  out.grad.assign(mesh.vertex_count(), Vec3::Zero());
  const auto& pairs = mesh.edge_face_pairs();
  if (pairs.empty()) return out;

  const auto& normals = mesh.face_normals();
  std::vector<Vec3> grad_n(mesh.face_count(), Vec3::Zero());
  const double scale = 1.0 / static_cast<double>(pairs.size());
  for (const auto& [f, g] : pairs) {
    out.value += scale * (1.0 - normals[f].dot(normals[g]));
    grad_n[f] -= scale * normals[g];
    grad_n[g] -= scale * normals[f];
  }

  // n = c / |c| with c = (v2 - v1) x (v3 - v1)
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    if (grad_n[f].isZero(0.0)) continue;
    const Face& tri = mesh.face(static_cast<int>(f));
    const Vec3 e1 = mesh.vertex(tri[1]) - mesh.vertex(tri[0]);
    const Vec3 e2 = mesh.vertex(tri[2]) - mesh.vertex(tri[0]);
    const double len = std::max(e1.cross(e2).norm(), std::numeric_limits<double>::min());
    const Vec3& n = normals[f];
    const Vec3 gc = (grad_n[f] - n * n.dot(grad_n[f])) / len;
    const Vec3 g1 = e2.cross(gc);
    const Vec3 g2 = gc.cross(e1);
    out.grad[tri[1]] += g1;
    out.grad[tri[2]] += g2;
    out.grad[tri[0]] -= g1 + g2;
  }
  return out;
}

}  // namespace meshsplat
