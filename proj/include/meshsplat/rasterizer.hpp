#pragma once

#include <span>
#include <vector>

#include "meshsplat/camera.hpp"
#include "meshsplat/simd/kernels.hpp"

namespace meshsplat {

inline constexpr double kNearPlane = 0.01;
/// Added to the projected covariance diagonal, px^2.
inline constexpr double kDilation = 0.3;
inline constexpr int kTileSize = 16;
/// Pixels with lower alpha report depth 0.
inline constexpr double kMinDepthAlpha = 1e-4;

using Mat23 = Eigen::Matrix<double, 2, 3>;

struct Splat2D {
  Vec2 mean = Vec2::Zero();  // pixels
  Mat2 cov = Mat2::Identity();
  double depth = 0.0;  // camera-space z
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();
  bool culled = false;
};

struct FrameBuffer {
  int width = 0, height = 0;
  std::vector<double> rgb;    // 3 * width * height, interleaved
  std::vector<double> alpha;  // width * height
  std::vector<double> depth;  // expected z where alpha > 1e-4, else 0
  /// z of the splat at which transmittance falls below 0.5, else 0. Not differentiated.
  std::vector<double> median_depth;

  FrameBuffer() = default;
  FrameBuffer(int w, int h) : width(w), height(h), rgb(3 * std::size_t(w) * h, 0.0), alpha(std::size_t(w) * h, 0.0),
                              depth(std::size_t(w) * h, 0.0), median_depth(std::size_t(w) * h, 0.0) {}
  std::size_t pixel_count() const { return std::size_t(width) * height; }
};

struct RasterOptions {
  Vec3 background = Vec3::Zero();
  simd::CompositeLimits limits;
};

/// Perspective projection with first-order covariance transfer and the dilation
/// floor. Gaussians closer than the near plane come back with culled = true.
Splat2D project(const Vec3& mean, const Mat3& cov, const Camera& cam);

/// Upstream gradients of one splat. cov uses the full-matrix convention.
struct SplatGrad {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Zero();
  double depth = 0.0;
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();
};

struct ProjectGrad {
  Vec3 mean = Vec3::Zero();  // world space
  Mat3 cov = Mat3::Zero();
};

ProjectGrad project_backward(const Vec3& mean, const Mat3& cov, const Camera& cam, const SplatGrad& grad);

/// Tiled, depth-sorted front-to-back compositing. Throws Error naming the first
/// non-finite splat.
FrameBuffer rasterize(std::span<const Splat2D> splats, const Camera& cam, const RasterOptions& opts = {});

/// Gradients w.r.t. a FrameBuffer's channels.
struct FrameBufferGrad {
  std::vector<double> rgb, alpha, depth;

  explicit FrameBufferGrad(std::size_t pixels = 0) : rgb(3 * pixels, 0.0), alpha(pixels, 0.0), depth(pixels, 0.0) {}
};

/// Analytic backward pass; recomputes the forward state tile by tile. Returns one
/// entry per input splat (zero for culled ones).
std::vector<SplatGrad> rasterize_backward(std::span<const Splat2D> splats, const Camera& cam,
                                          const RasterOptions& opts, const FrameBufferGrad& grad);

}  // namespace meshsplat
