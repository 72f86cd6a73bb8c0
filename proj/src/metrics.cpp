#include "meshsplat/metrics.hpp"

#include <cmath>
#include <unordered_map>

#include "meshsplat/binding.hpp"
#include "meshsplat/objectives.hpp"
#include "meshsplat/parallel.hpp"
#include "meshsplat/render.hpp"

namespace meshsplat {

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error("psnr: image shapes differ");
  if (a.data.empty()) throw Error("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim_index(const Image& a, const Image& b) { return ssim(a, b).value; }

std::vector<FrameMetrics> evaluate(const Scene& scene, const std::vector<Frame>& frames, const Vec3& background) {
  std::vector<FrameMetrics> out;
  RasterOptions opts;
  opts.background = background;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    const Image img = rgb_image(render(scene, f.pose, f.camera, opts));
    out.push_back({static_cast<int>(i), f.camera_id, psnr(img, f.rgb), ssim_index(img, f.rgb)});
  }
  return out;
}

double fraction_within(const std::vector<Vec3>& points, const TriangleMesh& mesh, double dist) {
  if (points.empty()) return 0.0;
  if (mesh.empty()) return 0.0;
  // bucket faces by the grid cells their bounding boxes touch
  const double cell = std::max(dist, 1e-9) * 2.0;
  auto key = [](long x, long y, long z) {
    return (static_cast<std::uint64_t>(x & 0x1fffff) << 42) | (static_cast<std::uint64_t>(y & 0x1fffff) << 21) |
           static_cast<std::uint64_t>(z & 0x1fffff);
  };
  auto cell_of = [&](double v) { return static_cast<long>(std::floor(v / cell)); };
  std::unordered_map<std::uint64_t, std::vector<int>> grid;
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    const auto c = mesh.corners(static_cast<int>(f));
    const Vec3 lo = c[0].cwiseMin(c[1]).cwiseMin(c[2]), hi = c[0].cwiseMax(c[1]).cwiseMax(c[2]);
    for (long x = cell_of(lo.x()); x <= cell_of(hi.x()); ++x)
      for (long y = cell_of(lo.y()); y <= cell_of(hi.y()); ++y)
        for (long z = cell_of(lo.z()); z <= cell_of(hi.z()); ++z) grid[key(x, y, z)].push_back(static_cast<int>(f));
  }
  std::vector<std::uint8_t> hit(points.size(), 0);
  parallel_for(points.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const Vec3& p = points[i];
      bool found = false;
      for (long x = cell_of(p.x() - dist); x <= cell_of(p.x() + dist) && !found; ++x)
        for (long y = cell_of(p.y() - dist); y <= cell_of(p.y() + dist) && !found; ++y)
          for (long z = cell_of(p.z() - dist); z <= cell_of(p.z() + dist) && !found; ++z) {
            const auto it = grid.find(key(x, y, z));
            if (it == grid.end()) continue;
            for (int f : it->second)
              if (point_triangle_distance(p, mesh, f).distance <= dist) {
                found = true;
                break;
              }
          }
      hit[i] = found;
    }
  });
  std::size_t n = 0;
  for (auto h : hit) n += h;
  return static_cast<double>(n) / static_cast<double>(points.size());
}

}  // namespace meshsplat
