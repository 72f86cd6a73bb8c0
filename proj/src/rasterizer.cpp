#include "meshsplat/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "meshsplat/parallel.hpp"

namespace meshsplat {

namespace {

Mat23 projection_jacobian(const Vec3& p, const Camera& cam) {
  const double iz = 1.0 / p.z();
  Mat23 j;
  j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz,
      0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
  return j;
}

// Splat ready for compositing, with its inclusive pixel bounding box.
struct Prepared {
  simd::SplatCoeffs c;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

bool finite_splat(const Splat2D& s) {
  return s.mean.allFinite() && s.cov.allFinite() && std::isfinite(s.depth) && std::isfinite(s.opacity) &&
         s.color.allFinite();
}

struct Binning {
  int tiles_x = 0, tiles_y = 0;
  std::vector<Prepared> prepared;   // indexed like the input
  std::vector<int> tile_offsets;    // tiles + 1
  std::vector<int> tile_entries;    // splat indices, depth-sorted per tile
};

Binning bin_splats(std::span<const Splat2D> splats, const Camera& cam, const simd::CompositeLimits& lim) {
  Binning bin;
  bin.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  bin.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
  bin.prepared.resize(splats.size());

  std::vector<int> visible;
  visible.reserve(splats.size());
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const Splat2D& s = splats[i];
    if (s.culled) continue;
    if (!finite_splat(s)) throw Error("rasterize: splat " + std::to_string(i) + " has non-finite parameters");
    if (!(s.opacity > 0.0)) continue;
    const double a = s.cov(0, 0), b = 0.5 * (s.cov(0, 1) + s.cov(1, 0)), d = s.cov(1, 1);
    const double det = a * d - b * b;
    if (!(det > 0.0)) continue;
    Prepared& p = bin.prepared[i];
    p.c.mx = s.mean.x();
    p.c.my = s.mean.y();
    p.c.ca = d / det;
    p.c.cb = -b / det;
    p.c.cc = a / det;
    p.c.opacity = s.opacity;
    p.c.r = s.color.x();
    p.c.g = s.color.y();
    p.c.b = s.color.z();
    p.c.depth = s.depth;
    // exact axis extents of the ellipse m <= cutoff, padded against rounding
    const double rx = std::sqrt(lim.cutoff * a) * (1.0 + 1e-9) + 1e-9;
    const double ry = std::sqrt(lim.cutoff * d) * (1.0 + 1e-9) + 1e-9;
    const double fx0 = std::ceil(s.mean.x() - rx), fx1 = std::floor(s.mean.x() + rx);
    const double fy0 = std::ceil(s.mean.y() - ry), fy1 = std::floor(s.mean.y() + ry);
    if (fx1 < 0 || fy1 < 0 || fx0 > cam.width - 1 || fy0 > cam.height - 1) continue;
    p.x0 = static_cast<int>(std::max(0.0, fx0));
    p.x1 = static_cast<int>(std::min<double>(cam.width - 1, fx1));
    p.y0 = static_cast<int>(std::max(0.0, fy0));
    p.y1 = static_cast<int>(std::min<double>(cam.height - 1, fy1));
    if (p.x0 > p.x1 || p.y0 > p.y1) continue;
    visible.push_back(static_cast<int>(i));
  }

  std::sort(visible.begin(), visible.end(), [&](int i, int j) {
    const double di = splats[static_cast<std::size_t>(i)].depth, dj = splats[static_cast<std::size_t>(j)].depth;
    if (di != dj) return di < dj;
    return i < j;
  });

  const int tiles = bin.tiles_x * bin.tiles_y;
  std::vector<int> counts(static_cast<std::size_t>(tiles), 0);
  for (int i : visible) {
    const Prepared& p = bin.prepared[static_cast<std::size_t>(i)];
    for (int ty = p.y0 / kTileSize; ty <= p.y1 / kTileSize; ++ty)
      for (int tx = p.x0 / kTileSize; tx <= p.x1 / kTileSize; ++tx) ++counts[static_cast<std::size_t>(ty * bin.tiles_x + tx)];
  }
  bin.tile_offsets.assign(static_cast<std::size_t>(tiles) + 1, 0);
  for (int t = 0; t < tiles; ++t) bin.tile_offsets[static_cast<std::size_t>(t) + 1] = bin.tile_offsets[static_cast<std::size_t>(t)] + counts[static_cast<std::size_t>(t)];
  bin.tile_entries.resize(static_cast<std::size_t>(bin.tile_offsets.back()));
  std::vector<int> fill(bin.tile_offsets.begin(), bin.tile_offsets.end() - 1);
  for (int i : visible) {
    const Prepared& p = bin.prepared[static_cast<std::size_t>(i)];
    for (int ty = p.y0 / kTileSize; ty <= p.y1 / kTileSize; ++ty)
      for (int tx = p.x0 / kTileSize; tx <= p.x1 / kTileSize; ++tx)
        bin.tile_entries[static_cast<std::size_t>(fill[static_cast<std::size_t>(ty * bin.tiles_x + tx)]++)] = i;
  }
  return bin;
}

constexpr int kTilePixels = kTileSize * kTileSize;

struct TileState {
  int px0 = 0, py0 = 0, w = 0, h = 0;
  std::array<double, kTilePixels> T, r, g, b, d, med;
  std::array<int, kTilePixels> last;
};

// Clipped span of splat p on tile row `row`; false if empty.
bool row_span(const Prepared& p, const TileState& st, int row, int& x0, int& count) {
  const int y = st.py0 + row;
  if (y < p.y0 || y > p.y1) return false;
  x0 = std::max(st.px0, p.x0);
  const int x1 = std::min(st.px0 + st.w - 1, p.x1);
  count = x1 - x0 + 1;
  return count > 0;
}

void composite_tile(const simd::KernelTable& k, const Binning& bin, int tile, const simd::CompositeLimits& lim,
                    TileState& st) {
  const int begin = bin.tile_offsets[static_cast<std::size_t>(tile)];
  const int n = bin.tile_offsets[static_cast<std::size_t>(tile) + 1] - begin;
  st.T.fill(1.0);
  st.r.fill(0.0);
  st.g.fill(0.0);
  st.b.fill(0.0);
  st.d.fill(0.0);
  st.med.fill(0.0);
  st.last.fill(-1);
  // pixels outside the image count as finished
  for (int row = 0; row < kTileSize; ++row)
    for (int col = 0; col < kTileSize; ++col)
      if (row >= st.h || col >= st.w) st.last[static_cast<std::size_t>(row * kTileSize + col)] = 0;

  for (int pos = 0; pos < n; ++pos) {
    const Prepared& p = bin.prepared[static_cast<std::size_t>(bin.tile_entries[static_cast<std::size_t>(begin + pos)])];
    for (int row = 0; row < st.h; ++row) {
      int x0 = 0, count = 0;
      if (!row_span(p, st, row, x0, count)) continue;
      const std::size_t o = static_cast<std::size_t>(row * kTileSize + (x0 - st.px0));
      simd::CompositeSpan span;
      span.x0 = x0;
      span.y = st.py0 + row;
      span.count = count;
      span.T = st.T.data() + o;
      span.r = st.r.data() + o;
      span.g = st.g.data() + o;
      span.b = st.b.data() + o;
      span.depth = st.d.data() + o;
      span.median = st.med.data() + o;
      span.last = st.last.data() + o;
      k.composite(p.c, pos, lim, span);
    }
    if ((pos & 7) == 7 && std::all_of(st.last.begin(), st.last.end(), [](int l) { return l >= 0; })) break;
  }
  for (int& l : st.last)
    if (l < 0) l = n;
}

void tile_origin(const Binning& bin, int tile, const Camera& cam, TileState& st) {
  st.px0 = (tile % bin.tiles_x) * kTileSize;
  st.py0 = (tile / bin.tiles_x) * kTileSize;
  st.w = std::min(kTileSize, cam.width - st.px0);
  st.h = std::min(kTileSize, cam.height - st.py0);
}

}  // namespace

Splat2D project(const Vec3& mean, const Mat3& cov, const Camera& cam) {
  Splat2D s;
  const Mat3& w = cam.world_to_camera.rotation;
  const Vec3 p = cam.world_to_camera.apply(mean);
  s.depth = p.z();
  if (!(p.z() > kNearPlane)) {
    s.culled = true;
    return s;
  }
  s.mean = Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
  const Mat23 t = projection_jacobian(p, cam) * w;
  s.cov = t * cov * t.transpose();
  s.cov(1, 0) = s.cov(0, 1);
  s.cov(0, 0) += kDilation;
  s.cov(1, 1) += kDilation;
  return s;
}

ProjectGrad project_backward(const Vec3& mean, const Mat3& cov, const Camera& cam, const SplatGrad& grad) {
  ProjectGrad out;
  const Mat3& w = cam.world_to_camera.rotation;
  const Vec3 p = cam.world_to_camera.apply(mean);
  if (!(p.z() > kNearPlane)) return out;
  const double x = p.x(), y = p.y(), z = p.z();
  const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
  const Mat23 j = projection_jacobian(p, cam);
  const Mat23 t = j * w;
  const Mat2 gs = 0.5 * (grad.cov + grad.cov.transpose());

  out.cov = t.transpose() * gs * t;
  const Mat23 dt = 2.0 * gs * t * cov;
  const Mat23 dj = dt * w.transpose();

  Vec3 dp;
  dp.x() = grad.mean.x() * cam.fx * iz - dj(0, 2) * cam.fx * iz2;
  dp.y() = grad.mean.y() * cam.fy * iz - dj(1, 2) * cam.fy * iz2;
  dp.z() = -grad.mean.x() * cam.fx * x * iz2 - grad.mean.y() * cam.fy * y * iz2 + grad.depth -
           dj(0, 0) * cam.fx * iz2 + dj(0, 2) * 2.0 * cam.fx * x * iz3 - dj(1, 1) * cam.fy * iz2 +
           dj(1, 2) * 2.0 * cam.fy * y * iz3;
  out.mean = w.transpose() * dp;
  return out;
}

FrameBuffer rasterize(std::span<const Splat2D> splats, const Camera& cam, const RasterOptions& opts) {
  cam.validate();
  const Binning bin = bin_splats(splats, cam, opts.limits);
  const simd::KernelTable& k = simd::kernels();
  FrameBuffer fb(cam.width, cam.height);
  const Vec3 bg = opts.background;
  const int tiles = bin.tiles_x * bin.tiles_y;

  parallel_for(static_cast<std::size_t>(tiles), [&](std::size_t t0, std::size_t t1) {
    TileState st;
    for (std::size_t t = t0; t < t1; ++t) {
      const int tile = static_cast<int>(t);
      tile_origin(bin, tile, cam, st);
      composite_tile(k, bin, tile, opts.limits, st);
      for (int row = 0; row < st.h; ++row) {
        for (int col = 0; col < st.w; ++col) {
          const std::size_t i = static_cast<std::size_t>(row * kTileSize + col);
          const std::size_t px = static_cast<std::size_t>(st.py0 + row) * cam.width + static_cast<std::size_t>(st.px0 + col);
          const double T = st.T[i];
          fb.rgb[3 * px] = st.r[i] + T * bg.x();
          fb.rgb[3 * px + 1] = st.g[i] + T * bg.y();
          fb.rgb[3 * px + 2] = st.b[i] + T * bg.z();
          const double a = 1.0 - T;
          fb.alpha[px] = a;
          fb.depth[px] = a > kMinDepthAlpha ? st.d[i] / a : 0.0;
          fb.median_depth[px] = st.med[i];
        }
      }
    }
  });
  return fb;
}

std::vector<SplatGrad> rasterize_backward(std::span<const Splat2D> splats, const Camera& cam,
                                          const RasterOptions& opts, const FrameBufferGrad& grad) {
  cam.validate();
  const std::size_t npx = std::size_t(cam.width) * cam.height;
  if (grad.rgb.size() != 3 * npx || grad.alpha.size() != npx || grad.depth.size() != npx)
    throw Error("rasterize_backward: gradient buffer size mismatch");

  const Binning bin = bin_splats(splats, cam, opts.limits);
  const simd::KernelTable& k = simd::kernels();
  const Vec3 bg = opts.background;
  const int tiles = bin.tiles_x * bin.tiles_y;
  std::vector<simd::SplatCoeffGrad> partial(bin.tile_entries.size());

  parallel_for(static_cast<std::size_t>(tiles), [&](std::size_t t0, std::size_t t1) {
    TileState st;
    std::array<double, kTilePixels> suffix, gr, gg, gb, gd;
    for (std::size_t t = t0; t < t1; ++t) {
      const int tile = static_cast<int>(t);
      tile_origin(bin, tile, cam, st);
      composite_tile(k, bin, tile, opts.limits, st);
      const int begin = bin.tile_offsets[t];

      int max_last = 0;
      for (int row = 0; row < kTileSize; ++row) {
        for (int col = 0; col < kTileSize; ++col) {
          const std::size_t i = static_cast<std::size_t>(row * kTileSize + col);
          if (row >= st.h || col >= st.w) {
            suffix[i] = gr[i] = gg[i] = gb[i] = gd[i] = 0.0;
            continue;
          }
          const std::size_t px = static_cast<std::size_t>(st.py0 + row) * cam.width + static_cast<std::size_t>(st.px0 + col);
          gr[i] = grad.rgb[3 * px];
          gg[i] = grad.rgb[3 * px + 1];
          gb[i] = grad.rgb[3 * px + 2];
          const double T = st.T[i];
          const double a = 1.0 - T;
          double g_alpha = grad.alpha[px];
          if (a > kMinDepthAlpha) {
            gd[i] = grad.depth[px] / a;
            g_alpha -= grad.depth[px] * st.d[i] / (a * a);
          } else {
            gd[i] = 0.0;
          }
          suffix[i] = T * (gr[i] * bg.x() + gg[i] * bg.y() + gb[i] * bg.z() - g_alpha);
          max_last = std::max(max_last, st.last[i]);
        }
      }

      for (int pos = max_last - 1; pos >= 0; --pos) {
        const Prepared& p = bin.prepared[static_cast<std::size_t>(bin.tile_entries[static_cast<std::size_t>(begin + pos)])];
        simd::SplatCoeffGrad g;
        for (int row = 0; row < st.h; ++row) {
          int x0 = 0, count = 0;
          if (!row_span(p, st, row, x0, count)) continue;
          const std::size_t o = static_cast<std::size_t>(row * kTileSize + (x0 - st.px0));
          simd::BackwardSpan span;
          span.x0 = x0;
          span.y = st.py0 + row;
          span.count = count;
          span.T = st.T.data() + o;
          span.suffix = suffix.data() + o;
          span.last = st.last.data() + o;
          span.grad_r = gr.data() + o;
          span.grad_g = gg.data() + o;
          span.grad_b = gb.data() + o;
          span.grad_depth = gd.data() + o;
          k.composite_backward(p.c, pos, opts.limits, span, g);
        }
        partial[static_cast<std::size_t>(begin + pos)] = g;
      }
    }
  });

  std::vector<simd::SplatCoeffGrad> acc(splats.size());
  for (std::size_t e = 0; e < bin.tile_entries.size(); ++e) {
    const simd::SplatCoeffGrad& g = partial[e];
    simd::SplatCoeffGrad& a = acc[static_cast<std::size_t>(bin.tile_entries[e])];
    a.mx += g.mx;
    a.my += g.my;
    a.ca += g.ca;
    a.cb += g.cb;
    a.cc += g.cc;
    a.opacity += g.opacity;
    a.r += g.r;
    a.g += g.g;
    a.b += g.b;
    a.depth += g.depth;
  }

  std::vector<SplatGrad> out(splats.size());
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const simd::SplatCoeffGrad& a = acc[i];
    const Prepared& p = bin.prepared[i];
    SplatGrad& o = out[i];
    o.mean = Vec2(a.mx, a.my);
    o.opacity = a.opacity;
    o.color = Vec3(a.r, a.g, a.b);
    o.depth = a.depth;
    Mat2 conic;
    conic << p.c.ca, p.c.cb, p.c.cb, p.c.cc;
    Mat2 gk;
    gk << a.ca, 0.5 * a.cb, 0.5 * a.cb, a.cc;
    o.cov = -conic * gk * conic;
  }
  return out;
}

}  // namespace meshsplat
