#include "meshsplat/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <utility>

namespace meshsplat {

namespace {

Vec3 raw_cross(const Vec3& v1, const Vec3& v2, const Vec3& v3) { return (v2 - v1).cross(v3 - v1); }

double segment_distance(const Vec3& p, const BoneSegment& s) {
  const Vec3 d = s.tail - s.head;
  const double len2 = d.squaredNorm();
  double t = len2 > 0.0 ? (p - s.head).dot(d) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (s.head + t * d)).norm();
}

}  // namespace

TriangleMesh::TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  const int nv = static_cast<int>(vertices_.size());
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    if (!vertices_[v].allFinite()) {
      std::ostringstream msg;
      msg << "vertex " << v << " has non-finite coordinates";
      throw MeshError(msg.str());
    }
  }
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const Face& tri = faces_[f];
    for (int k = 0; k < 3; ++k) {
      if (tri[k] < 0 || tri[k] >= nv) {
        std::ostringstream msg;
        msg << "face " << f << " references vertex " << tri[k] << " (vertex count " << nv << ")";
        throw MeshError(msg.str());
      }
    }
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
      std::ostringstream msg;
      msg << "face " << f << " repeats a vertex";
      throw MeshError(msg.str());
    }
    const double area = 0.5 * raw_cross(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]).norm();
    if (!(area > kMinFaceArea)) {
      std::ostringstream msg;
      msg << "face " << f << " is degenerate (area " << area << ")";
      throw MeshError(msg.str());
    }
  }
  rest_ = vertices_;
  derive_geometry();
  derive_topology();
}

std::array<Vec3, 3> TriangleMesh::corners(int f) const {
  const Face& tri = face(f);
  return {vertex(tri[0]), vertex(tri[1]), vertex(tri[2])};
}

std::span<const int> TriangleMesh::adjacent_faces(int f) const {
  const auto b = static_cast<std::size_t>(adj_offsets_[static_cast<std::size_t>(f)]);
  const auto e = static_cast<std::size_t>(adj_offsets_[static_cast<std::size_t>(f) + 1]);
  return {adj_ids_.data() + b, e - b};
}

std::span<const int> TriangleMesh::vertex_faces(int v) const {
  const auto b = static_cast<std::size_t>(vf_offsets_[static_cast<std::size_t>(v)]);
  const auto e = static_cast<std::size_t>(vf_offsets_[static_cast<std::size_t>(v) + 1]);
  return {vf_ids_.data() + b, e - b};
}

void TriangleMesh::set_vertices(std::vector<Vec3> vertices) {
  if (vertices.size() != vertices_.size()) throw MeshError("set_vertices: vertex count changed");
  vertices_ = std::move(vertices);
  derive_geometry();
}

void TriangleMesh::derive_geometry() {
  const std::size_t nf = faces_.size();
  normals_.resize(nf);
  areas_.resize(nf);
  frames_.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const Face& tri = faces_[f];
    const Vec3& v1 = vertices_[tri[0]];
    const Vec3 e1 = vertices_[tri[1]] - v1;
    const Vec3 e2 = vertices_[tri[2]] - v1;
    const Vec3 c = e1.cross(e2);
    const double len = c.norm();
    normals_[f] = c / std::max(len, std::numeric_limits<double>::min());
    areas_[f] = 0.5 * len;

    const double a = e1.dot(e1), b = e1.dot(e2), cc = e2.dot(e2);
    const double det = std::max(a * cc - b * b, std::numeric_limits<double>::min());
    const Vec3 du = (cc * e1 - b * e2) / det;
    const Vec3 dv = (a * e2 - b * e1) / det;
    ProjectionFrame& fr = frames_[f];
    for (int k = 0; k < 3; ++k) {
      fr.origin[k] = v1[k];
      fr.du[k] = du[k];
      fr.dv[k] = dv[k];
    }
  }
}

void TriangleMesh::derive_topology() {
  const std::size_t nv = vertices_.size();
  const std::size_t nf = faces_.size();

  // vertex -> faces (CSR)
  vf_offsets_.assign(nv + 1, 0);
  for (const Face& tri : faces_)
    for (int v : tri) ++vf_offsets_[static_cast<std::size_t>(v) + 1];
  for (std::size_t v = 0; v < nv; ++v) vf_offsets_[v + 1] += vf_offsets_[v];
  vf_ids_.assign(static_cast<std::size_t>(vf_offsets_[nv]), 0);
  {
    std::vector<int> cursor(vf_offsets_.begin(), vf_offsets_.end() - 1);
    for (std::size_t f = 0; f < nf; ++f)
      for (int v : faces_[f]) vf_ids_[static_cast<std::size_t>(cursor[static_cast<std::size_t>(v)]++)] = static_cast<int>(f);
  }

  // face -> faces sharing a vertex (CSR, sorted, self excluded)
  adj_offsets_.assign(nf + 1, 0);
  adj_ids_.clear();
  std::vector<int> scratch;
  for (std::size_t f = 0; f < nf; ++f) {
    scratch.clear();
    for (int v : faces_[f]) {
      for (int g : vertex_faces(v))
        if (g != static_cast<int>(f)) scratch.push_back(g);
    }
    std::sort(scratch.begin(), scratch.end());
    scratch.erase(std::unique(scratch.begin(), scratch.end()), scratch.end());
    adj_ids_.insert(adj_ids_.end(), scratch.begin(), scratch.end());
    adj_offsets_[f + 1] = static_cast<int>(adj_ids_.size());
  }

  // edges with cotangent weights, and edge-adjacent face pairs
  std::map<std::pair<int, int>, std::size_t> edge_index;
  std::vector<std::vector<int>> edge_faces;
  edges_.clear();
  for (std::size_t f = 0; f < nf; ++f) {
    const Face& tri = faces_[f];
    for (int k = 0; k < 3; ++k) {
      const int i = tri[k], j = tri[(k + 1) % 3], opp = tri[(k + 2) % 3];
      const auto key = std::minmax(i, j);
      auto [it, inserted] = edge_index.try_emplace({key.first, key.second}, edges_.size());
      if (inserted) {
        edges_.push_back({key.first, key.second, 0.0});
        edge_faces.emplace_back();
      }
      const Vec3 a = vertices_[i] - vertices_[opp];
      const Vec3 b = vertices_[j] - vertices_[opp];
      const double cot = a.dot(b) / std::max(a.cross(b).norm(), std::numeric_limits<double>::min());
      edges_[it->second].cot_weight += 0.5 * cot;
      edge_faces[it->second].push_back(static_cast<int>(f));
    }
  }
  edge_pairs_.clear();
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    edges_[e].cot_weight = std::clamp(edges_[e].cot_weight, kMinCotWeight, kMaxCotWeight);
    const auto& fs = edge_faces[e];
    for (std::size_t a = 0; a < fs.size(); ++a)
      for (std::size_t b = a + 1; b < fs.size(); ++b) edge_pairs_.push_back({fs[a], fs[b]});
  }
}

void TriangleMesh::set_skin_weights(std::vector<double> table, int bones) {
  if (bones <= 0) throw MeshError("skin weights: bone count must be positive");
  if (table.size() != vertices_.size() * static_cast<std::size_t>(bones)) {
    std::ostringstream msg;
    msg << "skin weights: expected " << vertices_.size() << " rows of " << bones << " weights";
    throw MeshError(msg.str());
  }
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    double sum = 0.0;
    for (int b = 0; b < bones; ++b) {
      const double w = table[v * static_cast<std::size_t>(bones) + static_cast<std::size_t>(b)];
      if (!(w >= 0.0)) {
        std::ostringstream msg;
        msg << "skin weights: vertex " << v << " has negative or non-finite weight";
        throw MeshError(msg.str());
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      std::ostringstream msg;
      msg << "skin weights: vertex " << v << " sums to " << sum;
      throw MeshError(msg.str());
    }
  }
  skin_ = std::move(table);
  bone_count_ = bones;
}

double TriangleMesh::mean_edge_length() const {
  if (edges_.empty()) return 0.0;
  double sum = 0.0;
  for (const Edge& e : edges_) sum += (vertices_[e.i] - vertices_[e.j]).norm();
  return sum / static_cast<double>(edges_.size());
}

double TriangleMesh::median_edge_length() const {
  if (edges_.empty()) return 0.0;
  std::vector<double> len;
  len.reserve(edges_.size());
  for (const Edge& e : edges_) len.push_back((vertices_[e.i] - vertices_[e.j]).norm());
  std::nth_element(len.begin(), len.begin() + static_cast<std::ptrdiff_t>(len.size() / 2), len.end());
  return len[len.size() / 2];
}

void TriangleMesh::bounding_box(Vec3& lo, Vec3& hi) const {
  lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  hi = -lo;
  for (const Vec3& v : vertices_) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
}

Vec3 face_normal(const TriangleMesh& mesh, int f) {
  const auto [v1, v2, v3] = mesh.corners(f);
  const Vec3 c = raw_cross(v1, v2, v3);
  const double len = c.norm();
  if (len < 1e-12) throw MeshError("face_normal: degenerate face " + std::to_string(f));
  return c / len;
}

std::vector<int> adjacency_set(const TriangleMesh& mesh, int f) {
  const auto adj = mesh.adjacent_faces(f);
  return {adj.begin(), adj.end()};
}

std::vector<double> inverse_distance_skin_weights(const std::vector<Vec3>& vertices,
                                                  std::span<const BoneSegment> bones, double power) {
  const std::size_t nb = bones.size();
  if (nb == 0) throw MeshError("inverse_distance_skin_weights: no bones");
  std::vector<double> table(vertices.size() * nb);
  for (std::size_t v = 0; v < vertices.size(); ++v) {
    double sum = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      const double d = std::max(segment_distance(vertices[v], bones[b]), 1e-6);
      const double w = 1.0 / std::pow(d, power);
      table[v * nb + b] = w;
      sum += w;
    }
    for (std::size_t b = 0; b < nb; ++b) table[v * nb + b] /= sum;
  }
  return table;
}

}  // namespace meshsplat
