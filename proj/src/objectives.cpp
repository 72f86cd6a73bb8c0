#include "meshsplat/objectives.hpp"

#include <array>
#include <cmath>

#include "meshsplat/binding.hpp"
#include "meshsplat/parallel.hpp"

namespace meshsplat {

void LossWeights::validate() const {
  for (double v : {mask, ssim, pa, na, lap, normal})
    if (!(std::isfinite(v) && v >= 0.0)) throw Error("loss weights must be finite and nonnegative");
}

namespace {

std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k;
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-mode separable correlation of an h x w plane to (h-10) x (w-10).
void filter_valid(const std::vector<double>& in, int w, int h, std::vector<double>& tmp, std::vector<double>& out) {
  static const auto k = ssim_kernel();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  tmp.assign(std::size_t(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int j = 0; j < kSsimWindow; ++j) s += k[j] * in[std::size_t(y) * w + x + j];
      tmp[std::size_t(y) * ow + x] = s;
    }
  out.assign(std::size_t(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int j = 0; j < kSsimWindow; ++j) s += k[j] * tmp[std::size_t(y + j) * ow + x];
      out[std::size_t(y) * ow + x] = s;
    }
}

// Adjoint of filter_valid.
void filter_valid_adjoint(const std::vector<double>& in, int w, int h, std::vector<double>& tmp,
                          std::vector<double>& out) {
  static const auto k = ssim_kernel();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  tmp.assign(std::size_t(h) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = in[std::size_t(y) * ow + x];
      for (int j = 0; j < kSsimWindow; ++j) tmp[std::size_t(y + j) * ow + x] += k[j] * v;
    }
  out.assign(std::size_t(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[std::size_t(y) * ow + x];
      for (int j = 0; j < kSsimWindow; ++j) out[std::size_t(y) * w + x + j] += k[j] * v;
    }
}

// Gradient of n = normalize((v2 - v1) x (v3 - v1)) pulled back to the corners.
std::array<Vec3, 3> normal_backward(const std::array<Vec3, 3>& c, const Vec3& g_n) {
  const Vec3 e1 = c[1] - c[0];
  const Vec3 e2 = c[2] - c[0];
  const Vec3 cr = e1.cross(e2);
  const double len = cr.norm();
  const Vec3 n = cr / len;
  const Vec3 gc = (g_n - n * n.dot(g_n)) / len;
  const Vec3 g1 = e2.cross(gc);
  const Vec3 g2 = gc.cross(e1);
  return {-(g1 + g2), g1, g2};
}

}  // namespace

SsimResult ssim(const Image& x, const Image& y, bool with_grad) {
  if (!x.same_shape(y)) throw Error("ssim: image shapes differ");
  if (x.width < kSsimWindow || x.height < kSsimWindow) throw Error("ssim: images must be at least 11x11");
  const int w = x.width, h = x.height, nc = x.channels;
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  const std::size_t np = std::size_t(w) * h, nv = std::size_t(ow) * oh;
  const double norm = 1.0 / (static_cast<double>(nv) * nc);

  SsimResult out;
  if (with_grad) out.grad.assign(x.data.size(), 0.0);

  std::vector<double> px(np), py(np), pxx(np), pyy(np), pxy(np), tmp;
  std::vector<double> mx, my, exx, eyy, exy;
  std::vector<double> d_mu, d_exx, d_exy, back;
  for (int c = 0; c < nc; ++c) {
    for (std::size_t i = 0; i < np; ++i) {
      const double a = x.data[i * nc + c], b = y.data[i * nc + c];
      px[i] = a;
      py[i] = b;
      pxx[i] = a * a;
      pyy[i] = b * b;
      pxy[i] = a * b;
    }
    filter_valid(px, w, h, tmp, mx);
    filter_valid(py, w, h, tmp, my);
    filter_valid(pxx, w, h, tmp, exx);
    filter_valid(pyy, w, h, tmp, eyy);
    filter_valid(pxy, w, h, tmp, exy);
    if (with_grad) {
      d_mu.assign(nv, 0.0);
      d_exx.assign(nv, 0.0);
      d_exy.assign(nv, 0.0);
    }
    for (std::size_t i = 0; i < nv; ++i) {
      const double ux = mx[i], uy = my[i];
      const double sxx = exx[i] - ux * ux, syy = eyy[i] - uy * uy, sxy = exy[i] - ux * uy;
      const double a1 = 2.0 * ux * uy + kSsimC1, a2 = 2.0 * sxy + kSsimC2;
      const double b1 = ux * ux + uy * uy + kSsimC1, b2 = sxx + syy + kSsimC2;
      const double s = a1 * a2 / (b1 * b2);
      out.value += s * norm;
      if (with_grad) {
        const double ib = 1.0 / (b1 * b2);
        d_mu[i] = norm * ((2.0 * uy * a2 - 2.0 * uy * a1) * ib - s * (2.0 * ux / b1 - 2.0 * ux / b2));
        d_exx[i] = norm * (-s / b2);
        d_exy[i] = norm * (2.0 * a1 * ib);
      }
    }
    if (with_grad) {
      filter_valid_adjoint(d_mu, w, h, tmp, back);
      for (std::size_t i = 0; i < np; ++i) out.grad[i * nc + c] += back[i];
      filter_valid_adjoint(d_exx, w, h, tmp, back);
      for (std::size_t i = 0; i < np; ++i) out.grad[i * nc + c] += 2.0 * px[i] * back[i];
      filter_valid_adjoint(d_exy, w, h, tmp, back);
      for (std::size_t i = 0; i < np; ++i) out.grad[i * nc + c] += py[i] * back[i];
    }
  }
  return out;
}

AppearanceLoss appearance_loss(const FrameBuffer& fb, const Image& rgb, const Image& mask, const LossWeights& w) {
  if (rgb.width != fb.width || rgb.height != fb.height || rgb.channels != 3)
    throw Error("appearance_loss: target RGB shape does not match the render");
  if (mask.width != fb.width || mask.height != fb.height || mask.channels != 1)
    throw Error("appearance_loss: target mask shape does not match the render");
  const std::size_t np = fb.pixel_count();
  AppearanceLoss out;
  out.grad = FrameBufferGrad(np);

  const double inv_rgb = 1.0 / (3.0 * static_cast<double>(np));
  for (std::size_t i = 0; i < 3 * np; ++i) {
    const double d = fb.rgb[i] - rgb.data[i];
    out.l1 += std::abs(d) * inv_rgb;
    out.grad.rgb[i] = d > 0 ? inv_rgb : (d < 0 ? -inv_rgb : 0.0);
  }
  const double inv_px = 1.0 / static_cast<double>(np);
  for (std::size_t i = 0; i < np; ++i) {
    const double d = fb.alpha[i] - mask.data[i];
    out.mask += std::abs(d) * inv_px;
    out.grad.alpha[i] = w.mask * (d > 0 ? inv_px : (d < 0 ? -inv_px : 0.0));
  }
  out.total = out.l1 + w.mask * out.mask;
  if (w.ssim > 0.0) {
    const Image rendered = rgb_image(fb);
    const SsimResult s = ssim(rendered, rgb, true);
    out.ssim = 1.0 - s.value;
    out.total += w.ssim * out.ssim;
    for (std::size_t i = 0; i < 3 * np; ++i) out.grad.rgb[i] -= w.ssim * s.grad[i];
  }
  return out;
}

AlignmentLoss position_alignment_loss(const DetachedSet& set, const TriangleMesh& mesh) {
  const std::size_t n = set.size();
  AlignmentLoss out;
  out.grad_center.assign(n, Vec3::Zero());
  out.grad_vertices.assign(mesh.vertex_count(), Vec3::Zero());
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> value(n);
  std::vector<Barycentric> weights(n);
  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const ClosestPoint cp = point_triangle_distance(set.center[i], mesh, set.binding[i].face);
      const Vec3 d = set.center[i] - cp.point;
      value[i] = d.squaredNorm();
      out.grad_center[i] = 2.0 * inv * d;
      weights[i] = cp.weights;
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    out.value += value[i] * inv;
    const Face& f = mesh.face(set.binding[i].face);
    // closest point moves with the vertices; the region choice is locally fixed
    for (int k = 0; k < 3; ++k) out.grad_vertices[f[k]] -= weights[i][k] * out.grad_center[i];
  }
  return out;
}

AlignmentLoss orientation_alignment_loss(const DetachedSet& set, const TriangleMesh& mesh) {
  const std::size_t n = set.size();
  AlignmentLoss out;
  out.grad_rotation.assign(n, Vec4::Zero());
  out.grad_vertices.assign(mesh.vertex_count(), Vec3::Zero());
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> value(n);
  std::vector<std::array<Vec3, 3>> corner_grad(n);
  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const int face = set.binding[i].face;
      const auto corners = mesh.corners(face);
      const Vec3 nf = (corners[1] - corners[0]).cross(corners[2] - corners[0]).normalized();
      const Mat3 r = quat_to_rotation(set.rotation[i]);
      const int axis = normal_axis(detached_scales(set.log_scale[i]));
      const Vec3 ng = r.col(axis);
      const double c = ng.dot(nf);
      value[i] = 1.0 - std::abs(c);
      const double dc = (c >= 0.0 ? -1.0 : 1.0) * inv;
      Mat3 gr = Mat3::Zero();
      gr.col(axis) = dc * nf;
      out.grad_rotation[i] = quat_to_rotation_backward(set.rotation[i], gr);
      corner_grad[i] = normal_backward(corners, dc * ng);
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    out.value += value[i] * inv;
    const Face& f = mesh.face(set.binding[i].face);
    for (int k = 0; k < 3; ++k) out.grad_vertices[f[k]] += corner_grad[i][k];
  }
  return out;
}

LossRecord total_loss(const Scene& scene, const FrameTarget& target, const LossWeights& w, const RasterOptions& opts,
                      SceneGradients& grads, FrameBuffer* rendered) {
  if (!target.rgb || !target.mask) throw Error("total_loss: missing target images");
  LossRecord rec;
  RenderCache cache;
  FrameBuffer fb = render(scene, target.pose, target.camera, opts, &cache);
  const AppearanceLoss app = appearance_loss(fb, *target.rgb, *target.mask, w);
  rec.l1 = app.l1;
  rec.mask = app.mask;
  rec.ssim = app.ssim;
  rec.total = app.total;
  render_backward(scene, target.pose, target.camera, opts, cache, app.grad, grads);

  if (w.lap > 0.0) {
    const MeshLoss lap = laplacian_loss(scene.mesh);
    rec.lap = lap.value;
    rec.total += w.lap * lap.value;
    for (std::size_t v = 0; v < lap.grad.size(); ++v) grads.vertices[v] += w.lap * lap.grad[v];
  }
  if (w.normal > 0.0) {
    const MeshLoss nrm = normal_smoothness_loss(scene.mesh);
    rec.normal = nrm.value;
    rec.total += w.normal * nrm.value;
    for (std::size_t v = 0; v < nrm.grad.size(); ++v) grads.vertices[v] += w.normal * nrm.grad[v];
  }
  if (scene.stage == Stage::Detached) {
    if (w.pa > 0.0) {
      const AlignmentLoss pa = position_alignment_loss(scene.detached, scene.mesh);
      rec.pa = pa.value;
      rec.total += w.pa * pa.value;
      for (std::size_t i = 0; i < pa.grad_center.size(); ++i) grads.center[i] += w.pa * pa.grad_center[i];
      for (std::size_t v = 0; v < pa.grad_vertices.size(); ++v) grads.vertices[v] += w.pa * pa.grad_vertices[v];
    }
    if (w.na > 0.0) {
      const AlignmentLoss na = orientation_alignment_loss(scene.detached, scene.mesh);
      rec.na = na.value;
      rec.total += w.na * na.value;
      for (std::size_t i = 0; i < na.grad_rotation.size(); ++i) grads.rotation[i] += w.na * na.grad_rotation[i];
      for (std::size_t v = 0; v < na.grad_vertices.size(); ++v) grads.vertices[v] += w.na * na.grad_vertices[v];
    }
  }
  if (rendered) *rendered = std::move(fb);
  return rec;
}

}  // namespace meshsplat
