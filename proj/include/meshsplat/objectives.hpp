#pragma once

#include <vector>

#include "meshsplat/image.hpp"
#include "meshsplat/render.hpp"

namespace meshsplat {

struct LossWeights {
  double mask = 0.1;
  double ssim = 0.2;
  double pa = 100.0;
  double na = 1.0;
  double lap = 0.1;
  double normal = 0.1;

  /// Throws Error for negative or non-finite weights.
  void validate() const;
};

/// SSIM window: 11x11 Gaussian, sigma 1.5, evaluated where the window fits.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct SsimResult {
  double value = 0.0;
  std::vector<double> grad;  // dSSIM/dx, same layout as x; empty unless requested
};

/// Mean SSIM over channels and valid window positions. Images must match in shape
/// and be at least 11x11.
SsimResult ssim(const Image& x, const Image& y, bool with_grad = false);

struct AppearanceLoss {
  double total = 0.0;
  double l1 = 0.0;    // mean |rgb - target| over pixels and channels
  double mask = 0.0;  // mean |alpha - mask|
  double ssim = 0.0;  // 1 - SSIM
  FrameBufferGrad grad;
};

AppearanceLoss appearance_loss(const FrameBuffer& rendered, const Image& target_rgb, const Image& target_mask,
                               const LossWeights& w);

struct AlignmentLoss {
  double value = 0.0;
  std::vector<Vec3> grad_center;
  std::vector<Vec4> grad_rotation;
  std::vector<Vec3> grad_vertices;
};

/// Mean over Gaussians of the squared distance from the center to the closed bound
/// triangle. Fills grad_center and grad_vertices.
AlignmentLoss position_alignment_loss(const DetachedSet& gaussians, const TriangleMesh& mesh);
/// Mean over Gaussians of 1 - |<n_G, n_f>|. Fills grad_rotation and grad_vertices.
AlignmentLoss orientation_alignment_loss(const DetachedSet& gaussians, const TriangleMesh& mesh);

/// Unweighted components and the weighted total.
struct LossRecord {
  double l1 = 0, mask = 0, ssim = 0, pa = 0, na = 0, lap = 0, normal = 0, total = 0;
};

struct FrameTarget {
  const Image* rgb = nullptr;
  const Image* mask = nullptr;
  Camera camera;
  Pose pose;
};

/// Adhered stage: appearance + smoothness. Detached stage adds the alignment terms,
/// evaluated on canonical geometry. Gradients are accumulated into `grads`.
LossRecord total_loss(const Scene& scene, const FrameTarget& target, const LossWeights& w, const RasterOptions& opts,
                      SceneGradients& grads, FrameBuffer* rendered = nullptr);

}  // namespace meshsplat
