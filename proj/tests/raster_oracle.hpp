#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "meshsplat/random.hpp"
#include "meshsplat/rasterizer.hpp"

namespace meshsplat::testing {

/// Untiled reference compositor: every pixel walks the full depth-sorted list.
inline FrameBuffer naive_rasterize(const std::vector<Splat2D>& splats, const Camera& cam, const RasterOptions& opts = {}) {
  const auto& lim = opts.limits;
  std::vector<int> order;
  for (std::size_t i = 0; i < splats.size(); ++i)
    if (!splats[i].culled && splats[i].opacity > 0.0) order.push_back(static_cast<int>(i));
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return splats[a].depth < splats[b].depth; });
  FrameBuffer fb(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      double T = 1.0, d = 0.0;
      Vec3 c = Vec3::Zero();
      for (int i : order) {
        const Splat2D& s = splats[static_cast<std::size_t>(i)];
        Mat2 cov = s.cov;
        cov(1, 0) = cov(0, 1) = 0.5 * (s.cov(0, 1) + s.cov(1, 0));
        if (!(cov.determinant() > 0.0)) continue;
        const Vec2 r = Vec2(x, y) - s.mean;
        const double m = r.dot(cov.inverse() * r);
        if (!(m <= lim.cutoff)) continue;
        const double a = std::min(lim.max_alpha, s.opacity * std::exp(-0.5 * m));
        c += a * T * s.color;
        d += a * T * s.depth;
        T *= 1.0 - a;
        if (T < lim.min_transmittance) break;
      }
      const std::size_t px = std::size_t(y) * cam.width + x;
      for (int k = 0; k < 3; ++k) fb.rgb[3 * px + k] = c[k] + T * opts.background[k];
      fb.alpha[px] = 1.0 - T;
      fb.depth[px] = 1.0 - T > kMinDepthAlpha ? d / (1.0 - T) : 0.0;
    }
  }
  return fb;
}

/// Random anisotropic splats scattered over (and slightly beyond) the image.
inline std::vector<Splat2D> random_splats(Rng& rng, int count, const Camera& cam, double min_sigma = 0.8,
                                          double max_sigma = 8.0) {
  std::vector<Splat2D> out;
  for (int i = 0; i < count; ++i) {
    Splat2D s;
    s.mean = Vec2(rng.uniform(-4, cam.width + 4), rng.uniform(-4, cam.height + 4));
    const double a = rng.uniform(min_sigma, max_sigma), b = rng.uniform(min_sigma, max_sigma), th = rng.uniform(0, M_PI);
    Mat2 r;
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    s.cov = r * Vec2(a * a, b * b).asDiagonal() * r.transpose();
    s.cov(1, 0) = s.cov(0, 1);
    s.depth = rng.uniform(1.0, 5.0);
    s.opacity = rng.uniform(0.05, 1.0);
    s.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    out.push_back(s);
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

inline double max_abs_diff(const FrameBuffer& a, const FrameBuffer& b) {
  return std::max({max_abs_diff(a.rgb, b.rgb), max_abs_diff(a.alpha, b.alpha), max_abs_diff(a.depth, b.depth)});
}

/// Smallest distance of any pixel's Mahalanobis distance from the cutoff, and of any
/// raw alpha from the clamp. Finite differences are only meaningful away from both.
inline double kink_margin(const std::vector<Splat2D>& splats, const Camera& cam, const RasterOptions& opts = {}) {
  double margin = INFINITY;
  for (const Splat2D& s : splats) {
    if (s.culled) continue;
    const Mat2 inv = s.cov.inverse();
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Vec2 r = Vec2(x, y) - s.mean;
        const double m = r.dot(inv * r);
        margin = std::min(margin, std::abs(m - opts.limits.cutoff));
        if (m <= opts.limits.cutoff)
          margin = std::min(margin, std::abs(s.opacity * std::exp(-0.5 * m) - opts.limits.max_alpha));
      }
  }
  return margin;
}

}  // namespace meshsplat::testing
