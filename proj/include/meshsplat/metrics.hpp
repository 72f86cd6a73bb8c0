#pragma once

#include <vector>

#include "meshsplat/image.hpp"
#include "meshsplat/dataset.hpp"
#include "meshsplat/gaussians.hpp"
#include "meshsplat/mesh.hpp"

namespace meshsplat {

/// Reported when two images are identical.
inline constexpr double kPsnrCap = 99.0;

/// Peak 1.0; capped at kPsnrCap.
double psnr(const Image& a, const Image& b);
/// Mean SSIM over the valid region (11x11 Gaussian window, sigma 1.5).
double ssim_index(const Image& a, const Image& b);

/// Fraction of points within `dist` of the closed surface of `mesh`.
double fraction_within(const std::vector<Vec3>& points, const TriangleMesh& mesh, double dist);

struct FrameMetrics {
  int index = 0;
  int camera_id = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Renders every frame of a split and scores it against its ground truth.
std::vector<FrameMetrics> evaluate(const Scene& scene, const std::vector<Frame>& frames,
                                   const Vec3& background = Vec3::Zero());

}  // namespace meshsplat
