#include "meshsplat/gaussians.hpp"

#include <algorithm>
#include <cmath>

namespace meshsplat {

namespace {

template <typename T>
void keep_masked(std::vector<T>& v, const std::vector<std::uint8_t>& mask) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask[i]) v[out++] = v[i];
  }
  v.resize(out);
}

}  // namespace

AdheredGaussian AdheredSet::get(std::size_t i) const {
  AdheredGaussian g;
  g.binding = binding[i];
  g.log_scale = log_scale[i];
  g.beta = beta[i];
  g.opacity_logit = opacity_logit[i];
  g.color_logit = color_logit[i];
  return g;
}

void AdheredSet::set(std::size_t i, const AdheredGaussian& g) {
  binding[i] = g.binding;
  log_scale[i] = g.log_scale;
  beta[i] = g.beta;
  opacity_logit[i] = g.opacity_logit;
  color_logit[i] = g.color_logit;
}

void AdheredSet::push_back(const AdheredGaussian& g) {
  binding.push_back(g.binding);
  log_scale.push_back(g.log_scale);
  beta.push_back(g.beta);
  opacity_logit.push_back(g.opacity_logit);
  color_logit.push_back(g.color_logit);
}

void AdheredSet::keep(const std::vector<std::uint8_t>& mask) {
  if (mask.size() != size()) throw Error("AdheredSet::keep: mask size mismatch");
  keep_masked(binding, mask);
  keep_masked(log_scale, mask);
  keep_masked(beta, mask);
  keep_masked(opacity_logit, mask);
  keep_masked(color_logit, mask);
}

DetachedGaussian DetachedSet::get(std::size_t i) const {
  DetachedGaussian g;
  g.center = center[i];
  g.log_scale = log_scale[i];
  g.rotation = rotation[i];
  g.binding = binding[i];
  g.opacity_logit = opacity_logit[i];
  g.color_logit = color_logit[i];
  return g;
}

void DetachedSet::set(std::size_t i, const DetachedGaussian& g) {
  center[i] = g.center;
  log_scale[i] = g.log_scale;
  rotation[i] = g.rotation;
  binding[i] = g.binding;
  opacity_logit[i] = g.opacity_logit;
  color_logit[i] = g.color_logit;
}

void DetachedSet::push_back(const DetachedGaussian& g) {
  center.push_back(g.center);
  log_scale.push_back(g.log_scale);
  rotation.push_back(g.rotation);
  binding.push_back(g.binding);
  opacity_logit.push_back(g.opacity_logit);
  color_logit.push_back(g.color_logit);
}

void DetachedSet::keep(const std::vector<std::uint8_t>& mask) {
  if (mask.size() != size()) throw Error("DetachedSet::keep: mask size mismatch");
  keep_masked(center, mask);
  keep_masked(log_scale, mask);
  keep_masked(rotation, mask);
  keep_masked(binding, mask);
  keep_masked(opacity_logit, mask);
  keep_masked(color_logit, mask);
}

Vec3 sigmoid(const Vec3& x) { return {sigmoid(x.x()), sigmoid(x.y()), sigmoid(x.z())}; }

Vec3 adhered_scales(const Vec2& log_scale) {
  return {kFlatScale, std::clamp(std::exp(log_scale.x()), kMinTangentialScale, kMaxScale),
          std::clamp(std::exp(log_scale.y()), kMinTangentialScale, kMaxScale)};
}

Vec3 detached_scales(const Vec3& log_scale) {
  Vec3 s;
  for (int k = 0; k < 3; ++k) s[k] = std::clamp(std::exp(log_scale[k]), kMinDetachedScale, kMaxScale);
  return s;
}

Vec3 adhered_center(const AdheredGaussian& g, const TriangleMesh& mesh) {
  const Face& f = mesh.face(g.binding.face);
  const Barycentric& a = g.binding.bary;
  return a.a1 * mesh.vertex(f[0]) + a.a2 * mesh.vertex(f[1]) + a.a3 * mesh.vertex(f[2]);
}

Mat3 adhered_rotation(const std::array<Vec3, 3>& c, double beta) {
  const Vec3 e1 = c[1] - c[0];
  const Vec3 e2 = c[2] - c[0];
  const Vec3 n = e1.cross(e2).normalized();
  // e1 already lies in the face plane, so Gram-Schmidt against n only normalizes it
  const Vec3 t = e1.normalized();
  const Vec3 b = n.cross(t);
  const double cb = std::cos(beta), sb = std::sin(beta);
  Mat3 r;
  r.col(0) = n;
  r.col(1) = cb * t + sb * b;
  r.col(2) = -sb * t + cb * b;
  return r;
}

Mat3 adhered_rotation(const AdheredGaussian& g, const TriangleMesh& mesh) {
  return adhered_rotation(mesh.corners(g.binding.face), g.beta);
}

Mat3 covariance(const Vec3& scales, const Mat3& rotation) {
  const Mat3 m = rotation * scales.asDiagonal();
  Mat3 cov = m * m.transpose();
  // exact symmetry regardless of summation order
  cov(1, 0) = cov(0, 1);
  cov(2, 0) = cov(0, 2);
  cov(2, 1) = cov(1, 2);
  return cov;
}

Mat3 quat_to_rotation(const Vec4& q_in) {
  const Vec4 q = q_in.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Vec4 rotation_to_quat(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  Vec4 out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0) out = -out;
  return out;
}

Vec4 quat_to_rotation_backward(const Vec4& q_in, const Mat3& g) {
  const double norm = q_in.norm();
  const Vec4 q = q_in / norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 dq;
  dq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  dq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1) -
               2 * x * g(2, 2));
  dq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1) -
               2 * y * g(2, 2));
  dq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
               x * g(2, 0) + y * g(2, 1));
  // through q / |q|
  return (dq - q * q.dot(dq)) / norm;
}

TangentFrameGrad adhered_rotation_backward(const std::array<Vec3, 3>& c, double beta, const Mat3& g) {
  const Vec3 e1 = c[1] - c[0];
  const Vec3 e2 = c[2] - c[0];
  const Vec3 cr = e1.cross(e2);
  const double cn = cr.norm();
  const Vec3 n = cr / cn;
  const double e1n = e1.norm();
  const Vec3 t = e1 / e1n;
  const Vec3 b = n.cross(t);
  const double cb = std::cos(beta), sb = std::sin(beta);
  const Vec3 col1 = cb * t + sb * b;
  const Vec3 col2 = -sb * t + cb * b;

  TangentFrameGrad out;
  out.beta = g.col(1).dot(col2) - g.col(2).dot(col1);

  Vec3 g_t = cb * g.col(1) - sb * g.col(2);
  const Vec3 g_b = sb * g.col(1) + cb * g.col(2);
  Vec3 g_n = g.col(0) + t.cross(g_b);
  g_t += g_b.cross(n);

  const Vec3 g_c = (g_n - n * n.dot(g_n)) / cn;
  Vec3 g_e1 = (g_t - t * t.dot(g_t)) / e1n;
  g_e1 += e2.cross(g_c);
  const Vec3 g_e2 = g_c.cross(e1);

  out.corners[0] = -(g_e1 + g_e2);
  out.corners[1] = g_e1;
  out.corners[2] = g_e2;
  return out;
}

CovarianceGrad covariance_backward(const Vec3& s, const Mat3& r, const Mat3& grad_cov) {
  const Mat3 g = 0.5 * (grad_cov + grad_cov.transpose());
  const Vec3 s2 = s.cwiseProduct(s);
  CovarianceGrad out;
  out.rotation = 2.0 * g * r * s2.asDiagonal();
  const Mat3 rgr = r.transpose() * g * r;
  for (int k = 0; k < 3; ++k) out.scales[k] = 2.0 * s[k] * rgr(k, k);
  return out;
}

DetachedGaussian detach(const AdheredGaussian& g, const TriangleMesh& mesh) {
  DetachedGaussian d;
  d.center = adhered_center(g, mesh);
  const Vec3 s = adhered_scales(g.log_scale);
  d.log_scale = Vec3(std::log(s[0]), std::log(s[1]), std::log(s[2]));
  d.rotation = rotation_to_quat(adhered_rotation(g, mesh));
  d.binding = g.binding;
  d.binding.signed_height = 0.0;
  d.opacity_logit = g.opacity_logit;
  d.color_logit = g.color_logit;
  return d;
}

DetachedSet detach(const AdheredSet& set, const TriangleMesh& mesh) {
  DetachedSet out;
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(detach(set.get(i), mesh));
  return out;
}

int normal_axis(const Vec3& s) {
  int k = 0;
  if (s[1] < s[k]) k = 1;
  if (s[2] < s[k]) k = 2;
  return k;
}

Vec3 gaussian_normal(const DetachedGaussian& g) {
  return quat_to_rotation(g.rotation).col(normal_axis(detached_scales(g.log_scale)));
}

}  // namespace meshsplat
