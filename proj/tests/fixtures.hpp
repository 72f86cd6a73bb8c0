#pragma once

#include <functional>

#include "meshsplat/binding.hpp"
#include "meshsplat/render.hpp"
#include "meshsplat/trainer.hpp"
#include "raster_oracle.hpp"
#include "test_util.hpp"

namespace meshsplat::testing {

struct Fixture {
  Scene scene;
  Pose pose;
  Camera cam;
  FrameBufferGrad up;
  RasterOptions opts;

  double loss() const {
    const FrameBuffer fb = render(scene, pose, cam, opts);
    double s = 0.0;
    for (std::size_t i = 0; i < fb.rgb.size(); ++i) s += up.rgb[i] * fb.rgb[i];
    for (std::size_t i = 0; i < fb.alpha.size(); ++i) s += up.alpha[i] * fb.alpha[i] + up.depth[i] * fb.depth[i];
    return s;
  }
};

/// Small two-bone sphere with ten large Gaussians filling a 32x32 view.
inline Fixture make_fixture(Rng& rng, Stage stage) {
  Fixture fx;
  TriangleMesh mesh = noisy_sphere(rng, 1, 0.1);
  std::vector<Vec3> v = mesh.vertices();
  for (Vec3& p : v) p *= 0.5;
  mesh.set_vertices(v);
  std::vector<double> w;
  for (const Vec3& p : v) {
    const double a = 0.5 + 0.4 * std::tanh(4.0 * p.y());
    w.push_back(a);
    w.push_back(1.0 - a);
  }
  mesh.set_skin_weights(w, 2);
  fx.scene.mesh = mesh;
  fx.scene.adhered = init_scene(mesh, 10, rng.next());
  for (std::size_t i = 0; i < fx.scene.adhered.size(); ++i) {
    auto& a = fx.scene.adhered;
    a.log_scale[i] = Vec2(std::log(rng.uniform(0.08, 0.2)), std::log(rng.uniform(0.08, 0.2)));
    a.beta[i] = rng.uniform(0, 2 * M_PI);
    a.opacity_logit[i] = rng.uniform(-1.5, 1.0);
    a.color_logit[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
    // keep barycentrics strictly inside so retraction stays inactive
    const Vec3 b = a.binding[i].bary.vec().cwiseMax(0.1);
    a.binding[i].bary = Barycentric::from(b / b.sum());
  }
  if (stage == Stage::Detached) {
    fx.scene.detached = detach(fx.scene.adhered, mesh);
    fx.scene.adhered = {};
    fx.scene.stage = Stage::Detached;
    for (std::size_t i = 0; i < fx.scene.detached.size(); ++i) {
      auto& d = fx.scene.detached;
      d.center[i] += 0.03 * random_vec(rng);
      d.log_scale[i].x() = std::log(rng.uniform(0.03, 0.1));
      d.rotation[i] += 0.1 * Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    }
  }
  fx.pose = Pose::identity(2);
  fx.pose.bones[1].rotation = Eigen::AngleAxisd(rng.uniform(0.1, 0.5), random_vec(rng).normalized()).toRotationMatrix();
  fx.pose.bones[1].translation = 0.05 * random_vec(rng);
  fx.cam = look_at(2.5 * random_vec(rng).normalized(), Vec3::Zero(), {0, 1, 0}, 40, 40, 32, 32);
  fx.opts.background = Vec3(0.2, 0.1, 0.4);
  fx.up = FrameBufferGrad(32 * 32);
  for (double& x : fx.up.rgb) x = rng.uniform(-1, 1);
  for (double& x : fx.up.alpha) x = rng.uniform(-1, 1);
  for (double& x : fx.up.depth) x = rng.uniform(-0.3, 0.3);
  return fx;
}

inline double kink_margin_of(const Fixture& fx) {
  RenderCache cache;
  render(fx.scene, fx.pose, fx.cam, fx.opts, &cache);
  return kink_margin(cache.splats, fx.cam, fx.opts);
}

/// Detached Gaussians scattered around a noisy sphere, each bound to its nearest face.
struct AlignFixture {
  TriangleMesh mesh;
  DetachedSet set;
};

inline AlignFixture align_fixture(Rng& rng, int count) {
  AlignFixture fx;
  fx.mesh = noisy_sphere(rng, 1, 0.1);
  for (int i = 0; i < count; ++i) {
    DetachedGaussian g;
    const int f = static_cast<int>(rng.next() % fx.mesh.face_count());
    const auto c = fx.mesh.corners(f);
    const double a = rng.uniform(-0.3, 1.2), b = rng.uniform(-0.3, 1.2 - a);
    g.center = c[0] + a * (c[1] - c[0]) + b * (c[2] - c[0]) + rng.uniform(-0.1, 0.1) * fx.mesh.face_normal(f);
    g.log_scale = Vec3(std::log(rng.uniform(0.01, 0.1)), std::log(rng.uniform(0.01, 0.1)), std::log(rng.uniform(0.01, 0.1)));
    g.rotation = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    g.binding.face = f;
    g.binding.bary = project_to_triangle(g.center, fx.mesh, f);
    fx.set.push_back(g);
  }
  return fx;
}

inline double vertex_fd(TriangleMesh& mesh, std::size_t v, int k, const std::function<double()>& f, double h) {
  std::vector<Vec3> verts = mesh.vertices();
  const double x0 = verts[v][k];
  verts[v][k] = x0 + h;
  mesh.set_vertices(verts);
  const double fp = f();
  verts[v][k] = x0 - h;
  mesh.set_vertices(verts);
  const double fm = f();
  verts[v][k] = x0;
  mesh.set_vertices(verts);
  return (fp - fm) / (2 * h);
}

}  // namespace meshsplat::testing
