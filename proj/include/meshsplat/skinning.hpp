#pragma once

#include <span>
#include <string>
#include <vector>

#include "meshsplat/binding.hpp"
#include "meshsplat/mesh.hpp"

namespace meshsplat {

/// Realized per-bone rigid transforms (canonical -> observation).
struct Pose {
  std::vector<Rigid> bones;

  int bone_count() const { return static_cast<int>(bones.size()); }
  static Pose identity(int bones);
};

/// Convex combination of bone transforms: x -> A x + b.
struct BlendedTransform {
  Mat3 A = Mat3::Identity();
  Vec3 b = Vec3::Zero();
};

/// Barycentric interpolation of the bound face's vertex weights, using the retracted
/// barycentrics. Writes mesh.bone_count() values.
void gaussian_blend_weights(const BindingRecord& binding, const TriangleMesh& mesh, std::span<double> out);
std::vector<double> gaussian_blend_weights(const BindingRecord& binding, const TriangleMesh& mesh);

BlendedTransform blend(std::span<const double> weights, const Pose& pose);

struct WarpedGaussian {
  Vec3 mean;
  Mat3 cov;
};

/// x_o = A x_c + b, cov_o = A cov_c A^T.
WarpedGaussian warp_gaussian(const Vec3& mean, const Mat3& cov, const BlendedTransform& t);

struct WarpGrad {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
};

/// grad_cov is symmetrized before use.
WarpGrad warp_gaussian_backward(const Vec3& mean, const Mat3& cov, const BlendedTransform& t, const Vec3& grad_mean,
                                const Mat3& grad_cov);

/// Per-bone gradients w.r.t. rotation entries and translations.
struct PoseGrad {
  std::vector<Mat3> rotation;
  std::vector<Vec3> translation;

  void resize(int bones);
};

/// Accumulates w_b * dA into pose_grad and, if grad_weights is non-empty, writes
/// dL/dw_b = <dA, R_b> + db . t_b.
void blend_backward(std::span<const double> weights, const Pose& pose, const Mat3& grad_A, const Vec3& grad_b,
                    PoseGrad* pose_grad, std::span<double> grad_weights);

/// Pose-sequence text format: bone count on the first line, then per frame B lines
/// of 12 numbers (row-major rotation, then translation).
std::vector<Pose> load_pose_sequence(const std::string& path);
void save_pose_sequence(const std::string& path, const std::vector<Pose>& poses, int bones);

}  // namespace meshsplat
