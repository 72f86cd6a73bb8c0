#include <gtest/gtest.h>

#include <fstream>

#include "meshsplat/render.hpp"
#include "meshsplat/skinning.hpp"
#include "meshsplat/trainer.hpp"
#include "test_util.hpp"

using namespace meshsplat;
using namespace meshsplat::testing;

namespace {

Pose random_pose(Rng& rng, int bones) {
  Pose p;
  for (int b = 0; b < bones; ++b) {
    Rigid r;
    r.rotation = random_rotation(rng);
    r.translation = random_vec(rng);
    p.bones.push_back(r);
  }
  return p;
}

std::vector<double> random_convex(Rng& rng, int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  double s = 0;
  for (double& x : w) s += (x = rng.uniform());
  for (double& x : w) x /= s;
  return w;
}

Mat3 random_spd(Rng& rng) {
  return covariance(Vec3(rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)), random_rotation(rng));
}

TriangleMesh weighted_triangle(const std::vector<double>& table, int bones) {
  TriangleMesh m({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});
  m.set_skin_weights(table, bones);
  return m;
}

}  // namespace

TEST(BlendWeights, VertexCorner) {
  const TriangleMesh m = weighted_triangle({0.2, 0.8, 0.5, 0.5, 1.0, 0.0}, 2);
  BindingRecord b;
  b.bary = {1, 0, 0};
  const auto w = gaussian_blend_weights(b, m);
  EXPECT_NEAR(w[0], 0.2, 1e-15);
  EXPECT_NEAR(w[1], 0.8, 1e-15);
}

TEST(BlendWeights, SharedRigidBoneIsOneHot) {
  const TriangleMesh m = weighted_triangle({0, 1, 0, 0, 1, 0, 0, 1, 0}, 3);
  Rng rng(51);
  for (int t = 0; t < 20; ++t) {
    BindingRecord b;
    const double a = rng.uniform(), c = rng.uniform() * (1 - a);
    b.bary = {a, c, 1 - a - c};
    const auto w = gaussian_blend_weights(b, m);
    EXPECT_NEAR(w[0], 0.0, 1e-15);
    EXPECT_NEAR(w[1], 1.0, 1e-12);
    EXPECT_NEAR(w[2], 0.0, 1e-15);
  }
}

TEST(BlendWeights, MatchesScalarInterpolation) {
  Rng rng(52);
  const int bones = 4;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> table;
    for (int v = 0; v < 3; ++v) {
      const auto w = random_convex(rng, bones);
      table.insert(table.end(), w.begin(), w.end());
    }
    const TriangleMesh m = weighted_triangle(table, bones);
    BindingRecord b;
    const double a = rng.uniform(), c = rng.uniform() * (1 - a);
    b.bary = {a, c, 1 - a - c};
    const auto w = gaussian_blend_weights(b, m);
    double sum = 0;
    for (int k = 0; k < bones; ++k) {
      const double expect = a * table[k] + c * table[bones + k] + (1 - a - c) * table[2 * bones + k];
      EXPECT_LT(std::abs(w[k] - expect), 1e-9);
      EXPECT_GE(w[k], 0.0);
      sum += w[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(BlendWeights, OutsideBarycentricsAreRetracted) {
  const TriangleMesh m = weighted_triangle({1, 0, 0, 1, 0, 1}, 2);
  BindingRecord b;
  b.bary = {-0.2, 0.7, 0.5};  // retracts to (0, 7/12, 5/12)
  const auto w = gaussian_blend_weights(b, m);
  EXPECT_NEAR(w[0], 0.0, 1e-12);
  EXPECT_NEAR(w[1], 1.0, 1e-12);
  b.bary = {1.5, -0.25, -0.25};
  const auto v = gaussian_blend_weights(b, m);
  EXPECT_NEAR(v[0], 1.0, 1e-12);
}

TEST(Blend, Examples) {
  Rng rng(53);
  const BlendedTransform id = blend(std::vector<double>{0.3, 0.7}, Pose::identity(2));
  EXPECT_EQ(id.A, Mat3::Identity());
  EXPECT_EQ(id.b, Vec3::Zero());

  Pose p = Pose::identity(2);
  p.bones[1].rotation = axis_angle({0, 0, 1}, M_PI / 2);
  const BlendedTransform rz = blend(std::vector<double>{0.0, 1.0}, p);
  EXPECT_LT((rz.A - axis_angle({0, 0, 1}, M_PI / 2)).norm(), 1e-15);

  Pose q = Pose::identity(2);
  q.bones[0].translation = Vec3(1, 2, 3);
  q.bones[1].translation = Vec3(-3, 0, 5);
  const BlendedTransform half = blend(std::vector<double>{0.5, 0.5}, q);
  EXPECT_LT((half.A - Mat3::Identity()).norm(), 1e-15);
  EXPECT_LT((half.b - Vec3(-1, 1, 4)).norm(), 1e-15);
}

TEST(Blend, IsLinearInWeights) {
  Rng rng(54);
  for (int t = 0; t < 50; ++t) {
    const Pose p = random_pose(rng, 5);
    const auto w1 = random_convex(rng, 5), w2 = random_convex(rng, 5);
    const double lam = rng.uniform();
    std::vector<double> mix(5);
    for (int k = 0; k < 5; ++k) mix[k] = lam * w1[k] + (1 - lam) * w2[k];
    const BlendedTransform a = blend(w1, p), b = blend(w2, p), c = blend(mix, p);
    EXPECT_LT((c.A - (lam * a.A + (1 - lam) * b.A)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((c.b - (lam * a.b + (1 - lam) * b.b)).cwiseAbs().maxCoeff(), 1e-12);
    // convex combination of rotations has spectral norm <= 1
    Eigen::JacobiSVD<Mat3> svd(c.A);
    EXPECT_LE(svd.singularValues()(0), 1 + 1e-9);
  }
}

TEST(Warp, Examples) {
  BlendedTransform t;
  t.b = Vec3(0.5, -1, 2);
  const Mat3 cov = Vec3(1, 4, 9).asDiagonal();
  const WarpedGaussian a = warp_gaussian(Vec3(1, 1, 1), cov, t);
  EXPECT_EQ(a.mean, Vec3(1.5, 0, 3));
  EXPECT_EQ(a.cov, cov);
  t.A = axis_angle({0, 0, 1}, M_PI / 2);
  t.b.setZero();
  const WarpedGaussian b = warp_gaussian(Vec3::Zero(), cov, t);
  EXPECT_LT((b.cov - Mat3(Vec3(4, 1, 9).asDiagonal())).norm(), 1e-12);
}

TEST(Warp, OneHotWeightsAreRigid) {
  Rng rng(55);
  for (int t = 0; t < 50; ++t) {
    const Pose p = random_pose(rng, 3);
    const int bone = static_cast<int>(rng.next() % 3);
    std::vector<double> w(3, 0.0);
    w[bone] = 1.0;
    const BlendedTransform tr = blend(w, p);
    const Vec3 x = random_vec(rng), y = random_vec(rng);
    const Mat3 cov = random_spd(rng);
    const WarpedGaussian wx = warp_gaussian(x, cov, tr), wy = warp_gaussian(y, cov, tr);
    EXPECT_LT((wx.mean - p.bones[bone].apply(x)).norm(), 1e-9);
    EXPECT_NEAR((wx.mean - wy.mean).norm(), (x - y).norm(), 1e-9);
    EXPECT_NEAR(wx.cov.norm(), cov.norm(), 1e-9);
    EXPECT_LT((wx.cov - wx.cov.transpose()).norm(), 1e-15);
  }
}

TEST(Warp, BackwardMatchesFiniteDifferences) {
  Rng rng(56);
  for (int t = 0; t < 20; ++t) {
    Vec3 mean = random_vec(rng);
    Mat3 cov = random_spd(rng);
    BlendedTransform tr;
    tr.A = random_rotation(rng) + 0.2 * Mat3::Random();
    tr.b = random_vec(rng);
    const Vec3 gm = random_vec(rng);
    Mat3 gc = Mat3::Random();
    gc = 0.5 * (gc + gc.transpose()).eval();
    const auto loss = [&] {
      const WarpedGaussian w = warp_gaussian(mean, cov, tr);
      return gm.dot(w.mean) + (gc.array() * w.cov.array()).sum();
    };
    const WarpGrad g = warp_gaussian_backward(mean, cov, tr, gm, gc);
    for (int k = 0; k < 3; ++k) {
      EXPECT_LT(rel_err(g.mean[k], central_diff(loss, mean[k], 1e-6), 1e-6), 1e-4);
      EXPECT_LT(rel_err(g.b[k], central_diff(loss, tr.b[k], 1e-6), 1e-6), 1e-4);
    }
    for (int k = 0; k < 9; ++k) {
      EXPECT_LT(rel_err(g.A(k), central_diff(loss, tr.A(k), 1e-6), 1e-6), 1e-4);
      // symmetric perturbation of cov: the gradient of an off-diagonal pair is the sum
      const int i = k % 3, j = k / 3;
      if (i > j) continue;
      const double h = 1e-6;
      const double c0 = cov(i, j);
      cov(i, j) = cov(j, i) = c0 + h;
      const double fp = loss();
      cov(i, j) = cov(j, i) = c0 - h;
      const double fm = loss();
      cov(i, j) = cov(j, i) = c0;
      const double fd = (fp - fm) / (2 * h);
      const double an = i == j ? g.cov(i, i) : g.cov(i, j) + g.cov(j, i);
      EXPECT_LT(rel_err(an, fd, 1e-6), 1e-4);
    }
  }
}

TEST(Blend, BackwardMatchesFiniteDifferences) {
  Rng rng(57);
  for (int t = 0; t < 20; ++t) {
    Pose p = random_pose(rng, 4);
    std::vector<double> w = random_convex(rng, 4);
    const Mat3 gA = Mat3::Random();
    const Vec3 gb = random_vec(rng);
    const auto loss = [&] {
      const BlendedTransform tr = blend(w, p);
      return (gA.array() * tr.A.array()).sum() + gb.dot(tr.b);
    };
    PoseGrad pg;
    pg.resize(4);
    std::vector<double> gw(4, 0.0);
    blend_backward(w, p, gA, gb, &pg, gw);
    for (int b = 0; b < 4; ++b) {
      EXPECT_LT(rel_err(gw[b], central_diff(loss, w[b], 1e-6), 1e-6), 1e-4);
      for (int k = 0; k < 9; ++k)
        EXPECT_LT(rel_err(pg.rotation[b](k), central_diff(loss, p.bones[b].rotation(k), 1e-6), 1e-6), 1e-4);
      for (int k = 0; k < 3; ++k)
        EXPECT_LT(rel_err(pg.translation[b][k], central_diff(loss, p.bones[b].translation[k], 1e-6), 1e-6), 1e-4);
    }
  }
}

TEST(Warp, IdentityPoseRendersLikeCanonical) {
  Subject subject = build_figure(5, 2, 0.0);
  Scene scene;
  scene.mesh = subject.mesh;
  scene.adhered = init_scene(scene.mesh, 2000, 8);
  const Camera cam = look_at({0, 0, 3}, {0, 0, 0}, {0, 1, 0}, 200, 200, 96, 96);
  const FrameBuffer posed = render(scene, Pose::identity(5), cam);
  Scene plain = scene;
  plain.mesh = TriangleMesh(scene.mesh.vertices(), scene.mesh.faces());
  const FrameBuffer canonical = render(plain, Pose{}, cam);
  for (std::size_t i = 0; i < posed.rgb.size(); ++i) ASSERT_NEAR(posed.rgb[i], canonical.rgb[i], 1e-9);
  for (std::size_t i = 0; i < posed.alpha.size(); ++i) ASSERT_NEAR(posed.alpha[i], canonical.alpha[i], 1e-9);
}

TEST(PoseFile, RoundTrip) {
  Rng rng(58);
  std::vector<Pose> seq;
  for (int f = 0; f < 4; ++f) seq.push_back(random_pose(rng, 3));
  const auto path = (temp_dir("poses") / "p.txt").string();
  save_pose_sequence(path, seq, 3);
  const auto back = load_pose_sequence(path);
  ASSERT_EQ(back.size(), seq.size());
  for (std::size_t f = 0; f < seq.size(); ++f)
    for (int b = 0; b < 3; ++b) {
      EXPECT_LT((back[f].bones[b].rotation - seq[f].bones[b].rotation).norm(), 1e-12);
      EXPECT_LT((back[f].bones[b].translation - seq[f].bones[b].translation).norm(), 1e-12);
    }
}

TEST(PoseFile, RejectsNonRotation) {
  const auto path = (temp_dir("poses_bad") / "p.txt").string();
  {
    std::ofstream f(path);
    f << "1\n2 0 0 0 1 0 0 0 1 0 0 0\n";
  }
  EXPECT_THROW(load_pose_sequence(path), Error);
}
