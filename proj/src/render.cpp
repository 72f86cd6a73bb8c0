#include "meshsplat/render.hpp"

#include <cmath>

#include "meshsplat/parallel.hpp"

namespace meshsplat {

namespace {

void check_pose(const Scene& scene, const Pose& pose) {
  if (pose.bone_count() != scene.mesh.bone_count())
    throw Error("render: pose has " + std::to_string(pose.bone_count()) + " bones, mesh has " +
                std::to_string(scene.mesh.bone_count()));
}

}  // namespace

SceneGradients SceneGradients::zeros_like(const Scene& scene) {
  SceneGradients g;
  const std::size_t n = scene.size();
  g.vertices.assign(scene.mesh.vertex_count(), Vec3::Zero());
  if (scene.stage == Stage::Adhered) {
    g.bary.assign(n, Vec3::Zero());
    g.log_scale2.assign(n, Vec2::Zero());
    g.beta.assign(n, 0.0);
  } else {
    g.center.assign(n, Vec3::Zero());
    g.log_scale3.assign(n, Vec3::Zero());
    g.rotation.assign(n, Vec4::Zero());
  }
  g.opacity_logit.assign(n, 0.0);
  g.color_logit.assign(n, Vec3::Zero());
  g.mean2d_norm.assign(n, 0.0);
  return g;
}

FrameBuffer render(const Scene& scene, const Pose& pose, const Camera& cam, const RasterOptions& opts,
                   RenderCache* cache) {
  check_pose(scene, pose);
  const std::size_t n = scene.size();
  const int nb = scene.mesh.bone_count();
  RenderCache local;
  RenderCache& c = cache ? *cache : local;
  c.mean_c.resize(n);
  c.rotation_c.resize(n);
  c.scales.resize(n);
  c.cov_c.resize(n);
  c.weights.assign(n * static_cast<std::size_t>(nb), 0.0);
  c.transforms.resize(n);
  c.mean_o.resize(n);
  c.cov_o.resize(n);
  c.splats.resize(n);
  const bool adhered = scene.stage == Stage::Adhered;

  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const BindingRecord* binding;
      double opacity_logit;
      Vec3 color_logit;
      if (adhered) {
        const AdheredSet& s = scene.adhered;
        binding = &s.binding[i];
        const auto corners = scene.mesh.corners(binding->face);
        const Barycentric& a = binding->bary;
        c.mean_c[i] = a.a1 * corners[0] + a.a2 * corners[1] + a.a3 * corners[2];
        c.rotation_c[i] = adhered_rotation(corners, s.beta[i]);
        c.scales[i] = adhered_scales(s.log_scale[i]);
        opacity_logit = s.opacity_logit[i];
        color_logit = s.color_logit[i];
      } else {
        const DetachedSet& s = scene.detached;
        binding = &s.binding[i];
        c.mean_c[i] = s.center[i];
        c.rotation_c[i] = quat_to_rotation(s.rotation[i]);
        c.scales[i] = detached_scales(s.log_scale[i]);
        opacity_logit = s.opacity_logit[i];
        color_logit = s.color_logit[i];
      }
      c.cov_c[i] = covariance(c.scales[i], c.rotation_c[i]);
      if (nb > 0) {
        std::span<double> w(c.weights.data() + i * nb, static_cast<std::size_t>(nb));
        gaussian_blend_weights(*binding, scene.mesh, w);
        c.transforms[i] = blend(w, pose);
      } else {
        c.transforms[i] = BlendedTransform{};
      }
      const WarpedGaussian wg = warp_gaussian(c.mean_c[i], c.cov_c[i], c.transforms[i]);
      c.mean_o[i] = wg.mean;
      c.cov_o[i] = wg.cov;
      Splat2D sp = project(wg.mean, wg.cov, cam);
      sp.opacity = sigmoid(opacity_logit);
      sp.color = sigmoid(color_logit);
      c.splats[i] = sp;
    }
  });
  return rasterize(c.splats, cam, opts);
}

void render_backward(const Scene& scene, const Pose& pose, const Camera& cam, const RasterOptions& opts,
                     const RenderCache& c, const FrameBufferGrad& fb_grad, SceneGradients& grads,
                     PoseGrad* pose_grad) {
  check_pose(scene, pose);
  const std::size_t n = scene.size();
  const int nb = scene.mesh.bone_count();
  const std::size_t bones = static_cast<std::size_t>(nb);
  const bool adhered = scene.stage == Stage::Adhered;
  const std::vector<SplatGrad> sg = rasterize_backward(c.splats, cam, opts, fb_grad);

  std::vector<std::array<Vec3, 3>> corner_grads(adhered ? n : 0);
  std::vector<Mat3> grad_A(pose_grad ? n : 0);
  std::vector<Vec3> grad_b(pose_grad ? n : 0);

  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> gw(bones);
    for (std::size_t i = i0; i < i1; ++i) {
      const Splat2D& sp = c.splats[i];
      if (adhered) corner_grads[i] = {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
      if (pose_grad) {
        grad_A[i].setZero();
        grad_b[i].setZero();
      }
      if (sp.culled) continue;
      const SplatGrad& g = sg[i];
      if (!grads.mean2d_norm.empty()) grads.mean2d_norm[i] += g.mean.norm();

      const double op = sp.opacity;
      grads.opacity_logit[i] += g.opacity * op * (1.0 - op);
      for (int k = 0; k < 3; ++k) grads.color_logit[i][k] += g.color[k] * sp.color[k] * (1.0 - sp.color[k]);

      const ProjectGrad pg = project_backward(c.mean_o[i], c.cov_o[i], cam, g);
      const WarpGrad wg = warp_gaussian_backward(c.mean_c[i], c.cov_c[i], c.transforms[i], pg.mean, pg.cov);
      if (pose_grad) {
        grad_A[i] = wg.A;
        grad_b[i] = wg.b;
      }
      const CovarianceGrad cg = covariance_backward(c.scales[i], c.rotation_c[i], wg.cov);

      if (adhered) {
        const AdheredSet& s = scene.adhered;
        const BindingRecord& bnd = s.binding[i];
        const auto corners = scene.mesh.corners(bnd.face);
        const TangentFrameGrad tg = adhered_rotation_backward(corners, s.beta[i], cg.rotation);
        grads.beta[i] += tg.beta;
        for (int k = 0; k < 2; ++k) {
          const double e = std::exp(s.log_scale[i][k]);
          if (e > kMinTangentialScale && e < kMaxScale) grads.log_scale2[i][k] += cg.scales[k + 1] * e;
        }
        Vec3 gbary;
        for (int k = 0; k < 3; ++k) {
          corner_grads[i][k] = tg.corners[k] + bnd.bary[k] * wg.mean;
          gbary[k] = corners[k].dot(wg.mean);
        }
        if (nb > 0 && !out_of_triangle(bnd.bary)) {
          // weights = sum_k a_k W_k / sum(a)
          blend_backward(std::span<const double>(c.weights.data() + i * bones, bones), pose, wg.A, wg.b, nullptr, gw);
          const double sum = bnd.bary.sum();
          const Face& f = scene.mesh.face(bnd.face);
          for (int k = 0; k < 3; ++k) {
            const auto wk = scene.mesh.skin_weights(f[k]);
            double acc = 0.0;
            for (std::size_t b = 0; b < bones; ++b) acc += gw[b] * (wk[b] - c.weights[i * bones + b]);
            gbary[k] += acc / sum;
          }
        }
        grads.bary[i] += gbary;
      } else {
        const DetachedSet& s = scene.detached;
        grads.center[i] += wg.mean;
        for (int k = 0; k < 3; ++k) {
          const double e = std::exp(s.log_scale[i][k]);
          if (e > kMinDetachedScale && e < kMaxScale) grads.log_scale3[i][k] += cg.scales[k] * e;
        }
        grads.rotation[i] += quat_to_rotation_backward(s.rotation[i], cg.rotation);
      }
    }
  });

  if (adhered) {
    for (std::size_t i = 0; i < n; ++i) {
      const Face& f = scene.mesh.face(scene.adhered.binding[i].face);
      for (int k = 0; k < 3; ++k) grads.vertices[static_cast<std::size_t>(f[k])] += corner_grads[i][k];
    }
  }
  if (pose_grad && nb > 0) {
    if (pose_grad->rotation.size() != bones) pose_grad->resize(nb);
    for (std::size_t i = 0; i < n; ++i) {
      if (c.splats[i].culled) continue;
      blend_backward(std::span<const double>(c.weights.data() + i * bones, bones), pose, grad_A[i], grad_b[i],
                     pose_grad, {});
    }
  }
}

}  // namespace meshsplat
