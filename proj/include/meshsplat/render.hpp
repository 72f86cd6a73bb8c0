#pragma once

#include <vector>

#include "meshsplat/camera.hpp"
#include "meshsplat/gaussians.hpp"
#include "meshsplat/rasterizer.hpp"
#include "meshsplat/skinning.hpp"

namespace meshsplat {

/// Canonical and posed Gaussian parameters from the last forward pass.
struct RenderCache {
  std::vector<Vec3> mean_c;
  std::vector<Mat3> rotation_c;
  std::vector<Vec3> scales;
  std::vector<Mat3> cov_c;
  std::vector<double> weights;  // size() x bones
  std::vector<BlendedTransform> transforms;
  std::vector<Vec3> mean_o;
  std::vector<Mat3> cov_o;
  std::vector<Splat2D> splats;
};

/// Gradients w.r.t. every learnable field of a Scene. Only the arrays belonging to
/// the scene's stage are sized.
struct SceneGradients {
  std::vector<Vec3> vertices;
  // adhered
  std::vector<Vec3> bary;
  std::vector<Vec2> log_scale2;
  std::vector<double> beta;
  // detached
  std::vector<Vec3> center;
  std::vector<Vec3> log_scale3;
  std::vector<Vec4> rotation;
  // both
  std::vector<double> opacity_logit;
  std::vector<Vec3> color_logit;
  /// Norm of dL/d(projected mean) per Gaussian, for densification statistics.
  std::vector<double> mean2d_norm;

  /// Zero-filled arrays matching the scene.
  static SceneGradients zeros_like(const Scene& scene);
};

/// Canonical parameters -> skinning warp -> projection -> rasterization. A pose with
/// zero bones is accepted for meshes without skin weights.
FrameBuffer render(const Scene& scene, const Pose& pose, const Camera& cam, const RasterOptions& opts = {},
                   RenderCache* cache = nullptr);

/// Accumulates dL/d(scene) into `grads` (sized with zeros_like) and, if requested,
/// dL/d(bone transforms) into pose_grad.
void render_backward(const Scene& scene, const Pose& pose, const Camera& cam, const RasterOptions& opts,
                     const RenderCache& cache, const FrameBufferGrad& fb_grad, SceneGradients& grads,
                     PoseGrad* pose_grad = nullptr);

}  // namespace meshsplat
