#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "meshsplat/gaussians.hpp"
#include "meshsplat/parallel.hpp"
#include "meshsplat/rasterizer.hpp"
#include "meshsplat/simd/kernels.hpp"
#include "raster_oracle.hpp"
#include "test_util.hpp"

using namespace meshsplat;
using namespace meshsplat::testing;

namespace {

Camera small_camera(int w, int h) {
  Camera c;
  c.width = w;
  c.height = h;
  c.fx = c.fy = 50.0;
  c.cx = w / 2.0;
  c.cy = h / 2.0;
  return c;
}

Splat2D point_splat(Vec2 mean, double opacity, Vec3 color, double depth, double sigma = 2.0) {
  Splat2D s;
  s.mean = mean;
  s.cov = sigma * sigma * Mat2::Identity();
  s.opacity = opacity;
  s.color = color;
  s.depth = depth;
  return s;
}

struct Upstream {
  FrameBufferGrad g;
  double eval(const FrameBuffer& fb) const {
    double s = 0;
    for (std::size_t i = 0; i < fb.rgb.size(); ++i) s += g.rgb[i] * fb.rgb[i];
    for (std::size_t i = 0; i < fb.alpha.size(); ++i) s += g.alpha[i] * fb.alpha[i] + g.depth[i] * fb.depth[i];
    return s;
  }
};

Upstream random_upstream(Rng& rng, std::size_t pixels) {
  Upstream u{FrameBufferGrad(pixels)};
  for (double& x : u.g.rgb) x = rng.uniform(-1, 1);
  for (double& x : u.g.alpha) x = rng.uniform(-1, 1);
  for (double& x : u.g.depth) x = rng.uniform(-0.3, 0.3);
  return u;
}

}  // namespace

TEST(Project, OnAxisIsotropic) {
  Camera cam = small_camera(128, 128);
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 64.0;
  const double sigma = 0.05, z = 2.0;
  const Splat2D s = project({0, 0, z}, sigma * sigma * Mat3::Identity(), cam);
  EXPECT_FALSE(s.culled);
  EXPECT_LT((s.mean - Vec2(64, 64)).norm(), 1e-12);
  const double v = std::pow(100.0 * sigma / z, 2);
  EXPECT_NEAR(s.cov(0, 0), v + kDilation, 1e-12);
  EXPECT_NEAR(s.cov(1, 1), v + kDilation, 1e-12);
  EXPECT_NEAR(s.cov(0, 1), 0.0, 1e-12);
  EXPECT_EQ(s.depth, z);
}

TEST(Project, BehindNearPlaneIsCulled) {
  const Camera cam = small_camera(32, 32);
  EXPECT_TRUE(project({0, 0, 0.005}, Mat3::Identity(), cam).culled);
  EXPECT_TRUE(project({0, 0, -1}, Mat3::Identity(), cam).culled);
}

TEST(Project, CovarianceMatchesNumericalJacobian) {
  Rng rng(61);
  for (int t = 0; t < 50; ++t) {
    Camera cam = look_at(3.0 * random_vec(rng).normalized(), Vec3::Zero(), {0, 1, 0}, 120, 110, 64, 64);
    const Vec3 mean = 0.4 * random_vec(rng);
    const Mat3 cov = covariance(Vec3(rng.uniform(0.01, 0.1), rng.uniform(0.01, 0.1), rng.uniform(0.01, 0.1)),
                                random_rotation(rng));
    const auto pix = [&](const Vec3& x) {
      const Vec3 p = cam.world_to_camera.apply(x);
      return Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    };
    Eigen::Matrix<double, 2, 3> J;
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e[k] = 1e-6;
      J.col(k) = (pix(mean + e) - pix(mean - e)) / 2e-6;
    }
    const Mat2 expect = J * cov * J.transpose() + kDilation * Mat2::Identity();
    const Splat2D s = project(mean, cov, cam);
    EXPECT_LT((s.mean - pix(mean)).norm(), 1e-9);
    for (int k = 0; k < 4; ++k) EXPECT_LT(rel_err(s.cov(k), expect(k), 1e-3), 1e-3);
  }
}

TEST(Project, BackwardMatchesFiniteDifferences) {
  Rng rng(62);
  for (int t = 0; t < 20; ++t) {
    Camera cam = look_at(3.0 * random_vec(rng).normalized(), Vec3::Zero(), {0, 1, 0}, 120, 110, 64, 64);
    Vec3 mean = 0.4 * random_vec(rng);
    Mat3 cov = covariance(Vec3(rng.uniform(0.02, 0.2), rng.uniform(0.02, 0.2), rng.uniform(0.02, 0.2)),
                          random_rotation(rng));
    SplatGrad up;
    up.mean = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    up.cov << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
    up.depth = rng.uniform(-1, 1);
    const auto loss = [&] {
      const Splat2D s = project(mean, cov, cam);
      return up.mean.dot(s.mean) + (up.cov.array() * s.cov.array()).sum() + up.depth * s.depth;
    };
    const ProjectGrad g = project_backward(mean, cov, cam, up);
    for (int k = 0; k < 3; ++k) EXPECT_LT(rel_err(g.mean[k], central_diff(loss, mean[k], 1e-6), 1e-6), 1e-4);
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) {
        const double c0 = cov(i, j), h = 1e-6;
        cov(i, j) = cov(j, i) = c0 + h;
        const double fp = loss();
        cov(i, j) = cov(j, i) = c0 - h;
        const double fm = loss();
        cov(i, j) = cov(j, i) = c0;
        const double an = i == j ? g.cov(i, i) : g.cov(i, j) + g.cov(j, i);
        EXPECT_LT(rel_err(an, (fp - fm) / (2 * h), 1e-6), 1e-4);
      }
  }
}

TEST(Rasterize, SingleSplatAtPixel) {
  const Camera cam = small_camera(16, 16);
  const std::vector<Splat2D> s = {point_splat({5, 7}, 0.5, Vec3::Ones(), 2.0)};
  const FrameBuffer fb = rasterize(s, cam);
  const std::size_t px = 7 * 16 + 5;
  EXPECT_NEAR(fb.rgb[3 * px], 0.5, 1e-15);
  EXPECT_NEAR(fb.alpha[px], 0.5, 1e-15);
  EXPECT_NEAR(fb.depth[px], 2.0, 1e-12);
}

TEST(Rasterize, TwoCoincidentSplats) {
  const Camera cam = small_camera(16, 16);
  const std::vector<Splat2D> s = {point_splat({5, 7}, 0.5, Vec3::Zero(), 3.0), point_splat({5, 7}, 0.5, Vec3::Ones(), 2.0)};
  const FrameBuffer fb = rasterize(s, cam);
  const std::size_t px = 7 * 16 + 5;
  EXPECT_NEAR(fb.rgb[3 * px], 0.5, 1e-15);
  EXPECT_NEAR(fb.alpha[px], 0.75, 1e-15);
  EXPECT_NEAR(fb.depth[px], (0.5 * 2.0 + 0.25 * 3.0) / 0.75, 1e-12);
}

TEST(Rasterize, EmptyIsBackground) {
  const Camera cam = small_camera(20, 12);
  RasterOptions o;
  o.background = Vec3(0.1, 0.2, 0.3);
  const FrameBuffer fb = rasterize(std::vector<Splat2D>{}, cam, o);
  for (std::size_t p = 0; p < fb.pixel_count(); ++p) {
    EXPECT_EQ(fb.rgb[3 * p + 2], 0.3);
    EXPECT_EQ(fb.alpha[p], 0.0);
    EXPECT_EQ(fb.depth[p], 0.0);
  }
}

TEST(Rasterize, MatchesNaiveOracle) {
  for (simd::Isa isa : {simd::Isa::Scalar, simd::Isa::Avx2}) {
    if (!simd::isa_available(isa)) continue;
    simd::force_isa(isa);
    Rng rng(63);
    for (int t = 0; t < 3; ++t) {
      const Camera cam = small_camera(64, 64);
      const auto splats = random_splats(rng, 500, cam);
      RasterOptions o;
      o.background = Vec3(0.2, 0.5, 0.9);
      const FrameBuffer fb = rasterize(splats, cam, o);
      const FrameBuffer ref = naive_rasterize(splats, cam, o);
      EXPECT_LT(max_abs_diff(fb, ref), 1e-6) << simd::isa_name(isa);
    }
  }
  simd::force_isa(simd::isa_available(simd::Isa::Avx2) ? simd::Isa::Avx2 : simd::Isa::Scalar);
}

TEST(Rasterize, EarlyTerminationMatchesOracle) {
  Rng rng(64);
  const Camera cam = small_camera(48, 40);
  std::vector<Splat2D> splats;
  for (int i = 0; i < 60; ++i) splats.push_back(point_splat({24 + rng.uniform(-2, 2), 20 + rng.uniform(-2, 2)}, 0.95,
                                                            Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                                            1.0 + 0.01 * i, 10.0));
  const FrameBuffer fb = rasterize(splats, cam);
  EXPECT_LT(max_abs_diff(fb, naive_rasterize(splats, cam)), 1e-6);
  EXPECT_GT(fb.alpha[20 * 48 + 24], 1 - 1e-4);
}

TEST(Rasterize, EnergyBound) {
  Rng rng(65);
  const Camera cam = small_camera(40, 40);
  auto splats = random_splats(rng, 300, cam);
  for (auto& s : splats) s.opacity = 1.0;
  RasterOptions o;
  o.background = Vec3::Ones();
  const FrameBuffer fb = rasterize(splats, cam, o);
  for (double a : fb.alpha) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  for (double c : fb.rgb) {
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0 + 1e-12);
  }
}

TEST(Rasterize, PermutationInvariant) {
  Rng rng(66);
  const Camera cam = small_camera(50, 45);
  auto splats = random_splats(rng, 200, cam);
  splats[3].depth = splats[4].depth;  // exercise the index tie-break
  const FrameBuffer a = rasterize(splats, cam);
  std::vector<int> perm(splats.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(7));
  // keep the tied pair in its original relative order
  const auto p3 = std::find(perm.begin(), perm.end(), 3), p4 = std::find(perm.begin(), perm.end(), 4);
  if (p3 > p4) std::iter_swap(p3, p4);
  std::vector<Splat2D> shuffled;
  for (int i : perm) shuffled.push_back(splats[static_cast<std::size_t>(i)]);
  const FrameBuffer b = rasterize(shuffled, cam);
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.depth, b.depth);
}

TEST(Rasterize, ZeroOpacitySplatChangesNothing) {
  Rng rng(67);
  const Camera cam = small_camera(40, 40);
  auto splats = random_splats(rng, 150, cam);
  const FrameBuffer a = rasterize(splats, cam);
  auto more = splats;
  Splat2D ghost = point_splat({20, 20}, 0.0, Vec3::Ones(), 0.5, 6.0);
  more.insert(more.begin() + 40, ghost);
  const FrameBuffer b = rasterize(more, cam);
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.depth, b.depth);
}

TEST(Rasterize, IndependentOfThreadCount) {
  Rng rng(68);
  const Camera cam = small_camera(70, 50);
  const auto splats = random_splats(rng, 400, cam);
  const Upstream up = random_upstream(rng, cam.width * cam.height);
  set_thread_count(1);
  const FrameBuffer a = rasterize(splats, cam);
  const auto ga = rasterize_backward(splats, cam, {}, up.g);
  for (int n : {2, 3, 8}) {
    set_thread_count(n);
    const FrameBuffer b = rasterize(splats, cam);
    const auto gb = rasterize_backward(splats, cam, {}, up.g);
    EXPECT_EQ(a.rgb, b.rgb);
    EXPECT_EQ(a.depth, b.depth);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ASSERT_EQ(ga[i].mean, gb[i].mean);
      ASSERT_EQ(ga[i].cov, gb[i].cov);
      ASSERT_EQ(ga[i].opacity, gb[i].opacity);
    }
  }
  set_thread_count(1);
}

TEST(Rasterize, NonFiniteSplatIsNamed) {
  const Camera cam = small_camera(16, 16);
  std::vector<Splat2D> s = {point_splat({5, 5}, 0.5, Vec3::Ones(), 1.0), point_splat({5, 5}, 0.5, Vec3::Ones(), 1.0)};
  s[1].mean.x() = std::nan("");
  try {
    rasterize(s, cam);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("splat 1"), std::string::npos);
  }
}

TEST(RasterizeBackward, ColorGradientIsAlpha) {
  const Camera cam = small_camera(16, 16);
  const std::vector<Splat2D> s = {point_splat({5, 7}, 0.8, Vec3(0.3, 0.3, 0.3), 2.0)};
  FrameBufferGrad g(256);
  const std::size_t px = 7 * 16 + 5;
  g.rgb[3 * px] = 1.0;
  const auto out = rasterize_backward(s, cam, {}, g);
  EXPECT_NEAR(out[0].color.x(), 0.8, 1e-15);
  EXPECT_EQ(out[0].color.y(), 0.0);
}

TEST(RasterizeBackward, ZeroUpstreamGivesZero) {
  Rng rng(69);
  const Camera cam = small_camera(32, 32);
  const auto splats = random_splats(rng, 50, cam);
  const auto out = rasterize_backward(splats, cam, {}, FrameBufferGrad(32 * 32));
  for (const auto& g : out) {
    EXPECT_EQ(g.mean, Vec2::Zero());
    EXPECT_EQ(g.cov, Mat2::Zero());
    EXPECT_EQ(g.opacity, 0.0);
    EXPECT_EQ(g.color, Vec3::Zero());
    EXPECT_EQ(g.depth, 0.0);
  }
}

TEST(RasterizeBackward, MatchesFiniteDifferences) {
  Rng rng(70);
  const Camera cam = small_camera(24, 24);
  RasterOptions opts;
  opts.background = Vec3(0.3, 0.6, 0.1);
  const double h = 1e-4;
  int trials = 0;
  while (trials < 20) {
    auto splats = random_splats(rng, 8, cam, 1.5, 5.0);
    for (auto& s : splats) s.opacity = rng.uniform(0.1, 0.9);
    if (kink_margin(splats, cam, opts) < 1e-2) continue;
    ++trials;
    const Upstream up = random_upstream(rng, cam.width * cam.height);
    const auto grads = rasterize_backward(splats, cam, opts, up.g);
    const auto loss = [&] { return up.eval(rasterize(splats, cam, opts)); };
    for (std::size_t i = 0; i < splats.size(); ++i) {
      Splat2D& s = splats[i];
      const SplatGrad& g = grads[i];
      for (int k = 0; k < 2; ++k) EXPECT_LT(rel_err(g.mean[k], central_diff(loss, s.mean[k], h), 1e-4), 1e-3);
      for (int k = 0; k < 3; ++k) EXPECT_LT(rel_err(g.color[k], central_diff(loss, s.color[k], h), 1e-4), 1e-3);
      EXPECT_LT(rel_err(g.opacity, central_diff(loss, s.opacity, h), 1e-4), 1e-3);
      EXPECT_LT(rel_err(g.depth, central_diff(loss, s.depth, h), 1e-4), 1e-3);
      // symmetric covariance perturbations
      for (auto [r, c] : {std::pair{0, 0}, std::pair{1, 1}, std::pair{0, 1}}) {
        const double c0 = s.cov(r, c);
        s.cov(r, c) = s.cov(c, r) = c0 + h;
        const double fp = loss();
        s.cov(r, c) = s.cov(c, r) = c0 - h;
        const double fm = loss();
        s.cov(r, c) = s.cov(c, r) = c0;
        const double an = r == c ? g.cov(r, r) : g.cov(r, c) + g.cov(c, r);
        EXPECT_LT(rel_err(an, (fp - fm) / (2 * h), 1e-4), 1e-3) << "splat " << i << " cov " << r << c;
      }
    }
  }
}
