#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "meshsplat/binding.hpp"
#include "meshsplat/mesh.hpp"

namespace meshsplat {

/// Fixed normal-axis scale of a flattened (adhered) Gaussian, in meters.
inline constexpr double kFlatScale = 1e-4;
/// Activated tangential scales of adhered Gaussians are clamped to [10 eps, 1].
inline constexpr double kMinTangentialScale = 10.0 * kFlatScale;
inline constexpr double kMaxScale = 1.0;
inline constexpr double kMinDetachedScale = 1e-6;

enum class Stage : std::uint32_t { Adhered = 0, Detached = 1 };

/// Stage-1 primitive: lives on its face, normal locked to the face normal.
struct AdheredGaussian {
  BindingRecord binding;  // binding.bary is a learnable parameter here
  Vec2 log_scale = Vec2::Zero();  // tangential s1, s2
  double beta = 0.0;              // in-plane rotation
  double opacity_logit = 0.0;
  Vec3 color_logit = Vec3::Zero();
};

/// Stage-2 primitive: free center and orientation, loosely bound to a face.
struct DetachedGaussian {
  Vec3 center = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4(1, 0, 0, 0);  // quaternion (w, x, y, z)
  BindingRecord binding;
  double opacity_logit = 0.0;
  Vec3 color_logit = Vec3::Zero();
};

/// Structure-of-arrays storage for adhered Gaussians.
struct AdheredSet {
  std::vector<BindingRecord> binding;
  std::vector<Vec2> log_scale;
  std::vector<double> beta;
  std::vector<double> opacity_logit;
  std::vector<Vec3> color_logit;

  std::size_t size() const { return binding.size(); }
  AdheredGaussian get(std::size_t i) const;
  void set(std::size_t i, const AdheredGaussian& g);
  void push_back(const AdheredGaussian& g);
  /// Keeps entries whose mask byte is nonzero, preserving order.
  void keep(const std::vector<std::uint8_t>& mask);
};

struct DetachedSet {
  std::vector<Vec3> center;
  std::vector<Vec3> log_scale;
  std::vector<Vec4> rotation;
  std::vector<BindingRecord> binding;
  std::vector<double> opacity_logit;
  std::vector<Vec3> color_logit;

  std::size_t size() const { return center.size(); }
  DetachedGaussian get(std::size_t i) const;
  void set(std::size_t i, const DetachedGaussian& g);
  void push_back(const DetachedGaussian& g);
  void keep(const std::vector<std::uint8_t>& mask);
};

/// Mesh plus the Gaussians of whichever stage is active.
struct Scene {
  TriangleMesh mesh;
  Stage stage = Stage::Adhered;
  AdheredSet adhered;
  DetachedSet detached;

  std::size_t size() const { return stage == Stage::Adhered ? adhered.size() : detached.size(); }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }
Vec3 sigmoid(const Vec3& x);

/// (eps, s1, s2) with s1, s2 = clamp(exp(log_scale), 10 eps, 1).
Vec3 adhered_scales(const Vec2& log_scale);
/// clamp(exp(log_scale), 1e-6, 1) per axis.
Vec3 detached_scales(const Vec3& log_scale);

/// a1 v1 + a2 v2 + a3 v3.
Vec3 adhered_center(const AdheredGaussian& g, const TriangleMesh& mesh);
/// Columns: face normal, then the tangent basis (v2 - v1 direction and n x t) turned
/// by beta about the normal.
Mat3 adhered_rotation(const AdheredGaussian& g, const TriangleMesh& mesh);
Mat3 adhered_rotation(const std::array<Vec3, 3>& corners, double beta);

/// R diag(s^2) R^T.
Mat3 covariance(const Vec3& scales, const Mat3& rotation);

/// Converts to the free parameterization; rendering is unchanged.
DetachedGaussian detach(const AdheredGaussian& g, const TriangleMesh& mesh);
DetachedSet detach(const AdheredSet& set, const TriangleMesh& mesh);

/// Index of the smallest scale, lowest index on ties.
int normal_axis(const Vec3& scales);
/// Rotation column along the smallest scale.
Vec3 gaussian_normal(const DetachedGaussian& g);

/// Rotation of the normalized quaternion (w, x, y, z).
Mat3 quat_to_rotation(const Vec4& q);
Vec4 rotation_to_quat(const Mat3& r);

// Backward passes. Matrix gradients use the full-matrix convention: entry (i, j) is
// dL/dM_ij with all nine entries treated as independent.

/// dL/dq (unnormalized q) from dL/dR.
Vec4 quat_to_rotation_backward(const Vec4& q, const Mat3& grad_r);

struct TangentFrameGrad {
  std::array<Vec3, 3> corners{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  double beta = 0.0;
};
TangentFrameGrad adhered_rotation_backward(const std::array<Vec3, 3>& corners, double beta, const Mat3& grad_r);

struct CovarianceGrad {
  Vec3 scales = Vec3::Zero();
  Mat3 rotation = Mat3::Zero();
};
/// grad_cov must be symmetric.
CovarianceGrad covariance_backward(const Vec3& scales, const Mat3& rotation, const Mat3& grad_cov);

}  // namespace meshsplat
