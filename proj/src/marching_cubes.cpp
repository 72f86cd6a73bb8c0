#include <array>
#include <cstdint>
#include <unordered_map>

#include "meshsplat/extraction.hpp"
#include "meshsplat/parallel.hpp"

namespace meshsplat {

namespace {

#include "marching_cubes_table.inc"

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

// Grid edge key: lower endpoint voxel index * 3 + axis.
std::uint64_t edge_key(const TsdfVolume& v, int i, int j, int k, int e) {
  const int* a = kCorner[kEdge[e][0]];
  const int* b = kCorner[kEdge[e][1]];
  int axis = 0;
  while (a[axis] == b[axis]) ++axis;
  const int li = i + std::min(a[0], b[0]), lj = j + std::min(a[1], b[1]), lk = k + std::min(a[2], b[2]);
  return static_cast<std::uint64_t>(v.index(li, lj, lk)) * 3 + static_cast<std::uint64_t>(axis);
}

Vec3 edge_point(const TsdfVolume& v, std::uint64_t key) {
  const int axis = static_cast<int>(key % 3);
  const std::size_t idx = key / 3;
  const int i = static_cast<int>(idx % v.nx);
  const int j = static_cast<int>((idx / v.nx) % v.ny);
  const int k = static_cast<int>(idx / (static_cast<std::size_t>(v.nx) * v.ny));
  const int i2 = i + (axis == 0), j2 = j + (axis == 1), k2 = k + (axis == 2);
  const double d0 = v.tsdf[idx], d1 = v.tsdf[v.index(i2, j2, k2)];
  const double t = d0 == d1 ? 0.5 : d0 / (d0 - d1);
  return v.position(i, j, k) + t * (v.position(i2, j2, k2) - v.position(i, j, k));
}

}  // namespace

TriangleMesh marching_cubes(const TsdfVolume& v) {
  if (v.nx < 2 || v.ny < 2 || v.nz < 2) return {};
  // per z-slab triangle lists of edge keys, merged in slab order
  std::vector<std::vector<std::array<std::uint64_t, 3>>> slabs(static_cast<std::size_t>(v.nz - 1));
  parallel_for(slabs.size(), [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      const int k = static_cast<int>(s);
      auto& out = slabs[s];
      for (int j = 0; j + 1 < v.ny; ++j) {
        for (int i = 0; i + 1 < v.nx; ++i) {
          int config = 0;
          bool observed = true;
          for (int c = 0; c < 8 && observed; ++c) {
            const std::size_t idx = v.index(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
            if (v.weight[idx] <= 0.0) observed = false;
            if (v.tsdf[idx] < 0.0) config |= 1 << c;
          }
          if (!observed || config == 0 || config == 255) continue;
          const std::int8_t* tri = kTriTable[config];
          for (int t = 0; tri[t] >= 0; t += 3) {
            // table winding faces the negative side; swap to face outward
            out.push_back({edge_key(v, i, j, k, tri[t]), edge_key(v, i, j, k, tri[t + 2]),
                           edge_key(v, i, j, k, tri[t + 1])});
          }
        }
      }
    }
  });

  std::unordered_map<std::uint64_t, int> ids;
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  for (const auto& slab : slabs) {
    for (const auto& tri : slab) {
      Vec3 p[3];
      for (int c = 0; c < 3; ++c) p[c] = edge_point(v, tri[c]);
      if (0.5 * (p[1] - p[0]).cross(p[2] - p[0]).norm() <= 10.0 * kMinFaceArea) continue;
      Face f;
      for (int c = 0; c < 3; ++c) {
        auto [it, fresh] = ids.try_emplace(tri[c], static_cast<int>(verts.size()));
        if (fresh) verts.push_back(p[c]);
        f[c] = it->second;
      }
      faces.push_back(f);
    }
  }
  if (faces.empty()) return {};
  return TriangleMesh(std::move(verts), std::move(faces));
}

}  // namespace meshsplat
