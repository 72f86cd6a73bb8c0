#include "meshsplat/binding.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <stdexcept>
#include <vector>

#include "meshsplat/parallel.hpp"
#include "meshsplat/simd/kernels.hpp"

namespace meshsplat {

Barycentric project_to_triangle(const Vec3& x, const TriangleMesh& mesh, int f) {
  const ProjectionFrame& fr = mesh.projection_frame(f);
  const double dx = x.x() - fr.origin[0];
  const double dy = x.y() - fr.origin[1];
  const double dz = x.z() - fr.origin[2];
  const double s = dx * fr.du[0] + dy * fr.du[1] + dz * fr.du[2];
  const double t = dx * fr.dv[0] + dy * fr.dv[1] + dz * fr.dv[2];
  return {1.0 - s - t, s, t};
}

bool out_of_triangle(const Barycentric& a) {
  const double sum = a.sum();
  if (sum == 0.0) throw std::invalid_argument("out_of_triangle: barycentric coordinates sum to zero");
  return a.a1 / sum < 0.0 || a.a2 / sum < 0.0 || a.a3 / sum < 0.0;
}

Barycentric retract(const Barycentric& a) {
  const Barycentric c{std::clamp(a.a1, 0.0, 1.0), std::clamp(a.a2, 0.0, 1.0), std::clamp(a.a3, 0.0, 1.0)};
  const double sum = c.sum();
  assert(sum > 0.0 && "retract: all components clamped to zero");
  if (!(sum > 0.0)) throw std::invalid_argument("retract: all components clamped to zero");
  return {c.a1 / sum, c.a2 / sum, c.a3 / sum};
}

ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  auto finish = [&p](ClosestPoint cp, const Vec3& q) {
    cp.point = q;
    cp.distance = (p - q).norm();
    return cp;
  };

  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return finish({0, {}, {1, 0, 0}, TriangleRegion::Vertex1}, a);

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return finish({0, {}, {0, 1, 0}, TriangleRegion::Vertex2}, b);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return finish({0, {}, {1.0 - v, v, 0}, TriangleRegion::Edge12}, a + v * ab);
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return finish({0, {}, {0, 0, 1}, TriangleRegion::Vertex3}, c);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return finish({0, {}, {1.0 - w, 0, w}, TriangleRegion::Edge13}, a + w * ac);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish({0, {}, {0, 1.0 - w, w}, TriangleRegion::Edge23}, b + w * (c - b));
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return finish({0, {}, {1.0 - v - w, v, w}, TriangleRegion::Interior}, a + v * ab + w * ac);
}

ClosestPoint point_triangle_distance(const Vec3& x, const TriangleMesh& mesh, int f) {
  const Face& tri = mesh.face(f);
  return closest_point_on_triangle(x, mesh.vertex(tri[0]), mesh.vertex(tri[1]), mesh.vertex(tri[2]));
}

namespace {

int nearest_among_neighbours(const Vec3& x, const TriangleMesh& mesh, int f_current) {
  // Candidates are f_current plus A(f_current), visited in ascending id order so a
  // strict comparison keeps the lowest id on ties.
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  auto consider = [&](int f) {
    const double d = point_triangle_distance(x, mesh, f).distance;
    if (d < best_d) {
      best_d = d;
      best = f;
    }
  };
  bool self_done = false;
  for (int g : mesh.adjacent_faces(f_current)) {
    if (!self_done && f_current < g) {
      consider(f_current);
      self_done = true;
    }
    consider(g);
  }
  if (!self_done) consider(f_current);
  return best;
}

}  // namespace

int walk_to_nearest(const Vec3& x, const TriangleMesh& mesh, int f_current) {
  if (!out_of_triangle(project_to_triangle(x, mesh, f_current))) return f_current;
  return nearest_among_neighbours(x, mesh, f_current);
}

WalkStats walk_batch(std::span<const Vec3> centers, const TriangleMesh& mesh, std::span<BindingRecord> bindings) {
  if (centers.size() != bindings.size()) throw Error("walk_batch: centers and bindings differ in length");
  const std::size_t n = centers.size();
  WalkStats stats;
  if (n == 0) return stats;

  std::vector<int> faces(n);
  for (std::size_t i = 0; i < n; ++i) faces[i] = bindings[i].face;
  std::vector<double> bary(3 * n);
  std::vector<std::uint8_t> outside(n);
  const double* xyz = centers.data()->data();
  const auto& kern = simd::kernels();
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    kern.project_batch(xyz + 3 * begin, faces.data() + begin, mesh.projection_frames().data(), end - begin,
                       bary.data() + 3 * begin, outside.data() + begin);
  });

  std::vector<std::uint8_t> moved(n, 0);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      BindingRecord& rec = bindings[i];
      Barycentric a{bary[3 * i], bary[3 * i + 1], bary[3 * i + 2]};
      if (outside[i]) {
        const int f = nearest_among_neighbours(centers[i], mesh, rec.face);
        if (f != rec.face) {
          rec.face = f;
          a = project_to_triangle(centers[i], mesh, f);
          moved[i] = 1;
        }
      }
      rec.bary = a;
      const ProjectionFrame& fr = mesh.projection_frame(rec.face);
      const Vec3 origin(fr.origin[0], fr.origin[1], fr.origin[2]);
      rec.signed_height = (centers[i] - origin).dot(mesh.face_normal(rec.face));
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    stats.outside += outside[i];
    stats.moved += moved[i];
  }
  return stats;
}

int nearest_face_exhaustive(const Vec3& x, const TriangleMesh& mesh) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    const double d = point_triangle_distance(x, mesh, static_cast<int>(f)).distance;
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(f);
    }
  }
  return best;
}

}  // namespace meshsplat
