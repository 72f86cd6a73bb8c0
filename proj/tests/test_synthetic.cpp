#include <gtest/gtest.h>

#include <set>

#include "meshsplat/metrics.hpp"
#include "meshsplat/synthetic.hpp"
#include "test_util.hpp"

using namespace meshsplat;
using namespace meshsplat::testing;

namespace {

int euler(const TriangleMesh& m) {
  std::set<std::pair<int, int>> edges;
  for (const Face& f : m.faces())
    for (int k = 0; k < 3; ++k) edges.insert(std::minmax(f[k], f[(k + 1) % 3]));
  return static_cast<int>(m.vertex_count() + m.face_count() - edges.size());
}

GenerateConfig small_config() {
  GenerateConfig c;
  c.frames = 6;
  c.test_views = 3;
  c.width = c.height = 40;
  c.fx = 80;
  c.supersample = 2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Primitives, IcosphereCountsAndRadius) {
  for (int s = 0; s < 4; ++s) {
    const TriangleMesh m = icosphere(s, 0.7);
    EXPECT_EQ(m.face_count(), 20u << (2 * s));
    EXPECT_EQ(euler(m), 2);
    for (const Vec3& p : m.vertices()) EXPECT_NEAR(p.norm(), 0.7, 1e-12);
  }
}

TEST(Primitives, TorusIsClosedGenusOne) {
  const TriangleMesh m = torus(12, 8, 1.0, 0.3);
  EXPECT_EQ(m.face_count(), 2u * 12 * 8);
  EXPECT_EQ(euler(m), 0);
}

TEST(Figure, GroundTruthSharesTopology) {
  for (int bones : {2, 5}) {
    const Subject s = build_figure(bones, 7, 0.012);
    EXPECT_EQ(s.skeleton.bone_count(), bones);
    EXPECT_EQ(s.mesh.faces(), s.gt_mesh.faces());
    EXPECT_EQ(s.colors.size(), s.gt_mesh.vertex_count());
    ASSERT_EQ(s.mesh.bone_count(), bones);
    double max_bump = 0.0;
    for (std::size_t v = 0; v < s.mesh.vertex_count(); ++v) {
      double sum = 0.0;
      for (double w : s.mesh.skin_weights(static_cast<int>(v))) {
        EXPECT_GE(w, 0.0);
        sum += w;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      max_bump = std::max(max_bump, (s.mesh.vertices()[v] - s.gt_mesh.vertices()[v]).norm());
    }
    EXPECT_GT(max_bump, 0.0);
    EXPECT_LE(max_bump, 0.012 + 1e-12);
  }
  EXPECT_THROW(build_figure(3, 0, 0.0), Error);
}

TEST(Figure, ZeroBumpGivesTemplate) {
  const Subject s = build_figure(5, 11, 0.0);
  EXPECT_EQ(s.mesh.vertices(), s.gt_mesh.vertices());
}

TEST(Figure, ZeroAmplitudeAndYawIsIdentity) {
  const Subject s = build_figure(5, 1, 0.0);
  for (double t : {0.0, 0.3, 0.77}) {
    const Pose p = figure_pose(s.skeleton, t, 0.0, 0.0, 9);
    ASSERT_EQ(p.bone_count(), 5);
    for (const Rigid& b : p.bones) {
      EXPECT_LT((b.rotation - Mat3::Identity()).norm(), 1e-12);
      EXPECT_LT(b.translation.norm(), 1e-12);
    }
    const std::vector<Vec3> posed = skin_vertices(s.mesh, p);
    ASSERT_EQ(posed.size(), s.mesh.vertex_count());
    for (std::size_t v = 0; v < posed.size(); ++v) EXPECT_LT((posed[v] - s.mesh.vertices()[v]).norm(), 1e-12);
  }
}

TEST(Figure, KinematicsKeepsJointsConnected) {
  Rng rng(4);
  const Subject s = build_figure(5, 2, 0.0);
  std::vector<Mat3> local;
  for (int b = 0; b < 5; ++b) local.push_back(random_rotation(rng));
  const Rigid root{random_rotation(rng), random_vec(rng)};
  const Pose p = forward_kinematics(s.skeleton, local, root);
  for (int b = 1; b < 5; ++b) {
    const int parent = s.skeleton.parent[b];
    const Vec3 j = s.skeleton.joint[b];
    // child and parent move a child's joint to the same place
    EXPECT_LT((p.bones[b].apply(j) - p.bones[parent].apply(j)).norm(), 1e-12);
    EXPECT_NEAR(p.bones[b].rotation.determinant(), 1.0, 1e-12);
  }
}

TEST(RasterizeMesh, FullScreenQuad) {
  const Camera cam = look_at({0, 0, 2}, Vec3::Zero(), {0, 1, 0}, 10, 10, 16, 12);
  const std::vector<Vec3> v = {{-5, -5, 0}, {5, -5, 0}, {5, 5, 0}, {-5, 5, 0}};
  const std::vector<Vec3> c(4, Vec3(0.2, 0.4, 0.6));
  const MeshImage img = rasterize_mesh(v, {{0, 1, 2}, {0, 2, 3}}, c, cam, 3);
  EXPECT_EQ(img.covered_samples, 16u * 12 * 9);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) {
      EXPECT_DOUBLE_EQ(img.mask.at(x, y), 1.0);
      EXPECT_NEAR(img.rgb.at(x, y, 1), 0.4, 1e-12);
      EXPECT_NEAR(img.depth.at(x, y), 2.0, 1e-12);
    }
}

TEST(RasterizeMesh, CoverageMatchesProjectedArea) {
  const Camera cam = look_at({0, 0, 4}, Vec3::Zero(), {0, 1, 0}, 40, 40, 48, 48);
  const std::vector<Vec3> v = {{-0.8, -0.6, 0}, {0.9, -0.5, 0}, {0.1, 0.9, 0}};
  const MeshImage img = rasterize_mesh(v, {{0, 1, 2}}, std::vector<Vec3>(3, Vec3::Ones()), cam, 8);
  double covered = 0.0;
  for (double m : img.mask.data) covered += m;
  // at depth 4 with fx 40 one unit spans 10 pixels
  const double area = 0.5 * std::abs((v[1] - v[0]).cross(v[2] - v[0]).z()) * 100.0;
  EXPECT_NEAR(covered, area, 0.02 * area);
  for (double m : img.mask.data) {
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
  }
}

TEST(RasterizeMesh, NearerSurfaceWins) {
  const Camera cam = look_at({0, 0, 3}, Vec3::Zero(), {0, 1, 0}, 20, 20, 8, 8);
  std::vector<Vec3> v = {{-5, -5, 0}, {5, -5, 0}, {0, 5, 0}, {-5, -5, 1}, {5, -5, 1}, {0, 5, 1}};
  std::vector<Vec3> c = {Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 1, 0), Vec3(0, 1, 0)};
  const MeshImage img = rasterize_mesh(v, {{0, 1, 2}, {3, 4, 5}}, c, cam, 1);
  EXPECT_NEAR(img.rgb.at(4, 4, 1), 1.0, 1e-12);
  EXPECT_NEAR(img.depth.at(4, 4), 2.0, 1e-12);
  EXPECT_THROW(rasterize_mesh(v, {{0, 1, 2}}, c, cam, 0), Error);
}

TEST(Generate, DeterministicPerSeed) {
  const GenerateConfig c = small_config();
  const SyntheticDataset a = generate(c), b = generate(c);
  ASSERT_EQ(a.train.size(), 6u);
  ASSERT_EQ(a.test.size(), 3u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].rgb.data, b.train[i].rgb.data);
    EXPECT_EQ(a.train[i].mask.data, b.train[i].mask.data);
  }
  GenerateConfig d = c;
  d.seed = 4;
  EXPECT_NE(generate(d).train[0].rgb.data, a.train[0].rgb.data);
}

TEST(Generate, SplitsUseDisjointCameras) {
  const SyntheticDataset ds = generate(small_config());
  std::set<int> train_ids, test_ids;
  for (const Frame& f : ds.train) train_ids.insert(f.camera_id);
  for (const Frame& f : ds.test) test_ids.insert(f.camera_id);
  EXPECT_EQ(train_ids, std::set<int>{0});
  EXPECT_EQ(test_ids, (std::set<int>{1, 2, 3}));
}

TEST(Generate, SubjectIsFramedInsideEveryImage) {
  const SyntheticDataset ds = generate(small_config());
  for (const auto* split : {&ds.train, &ds.test})
    for (const Frame& f : *split) {
      double covered = 0.0, border = 0.0;
      for (int y = 0; y < f.mask.height; ++y)
        for (int x = 0; x < f.mask.width; ++x) {
          covered += f.mask.at(x, y);
          if (x == 0 || y == 0 || x == f.mask.width - 1 || y == f.mask.height - 1) border += f.mask.at(x, y);
        }
      const double frac = covered / (f.mask.width * f.mask.height);
      EXPECT_GT(frac, 0.05);
      EXPECT_LT(frac, 0.7);
      EXPECT_EQ(border, 0.0);
      // background is black where nothing is covered
      for (int p = 0; p < f.mask.width * f.mask.height; ++p)
        if (f.mask.data[p] == 0.0) {
          EXPECT_EQ(f.rgb.data[3 * p], 0.0);
        }
    }
}

TEST(Generate, ConfigValidation) {
  GenerateConfig c;
  c.set("frames", "12");
  c.set("seed", "5");
  EXPECT_EQ(c.frames, 12);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_THROW(c.set("bogus", "1"), Error);
  EXPECT_THROW(c.set("frames", "x"), Error);
  c.supersample = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Generate, WriteAndLoadRoundTrip) {
  const auto dir = temp_dir("synthetic_rt");
  const GenerateConfig c = small_config();
  const SyntheticDataset ds = generate(c);
  write_dataset(dir.string(), ds, c);
  const auto train = load_split(dir.string(), "train");
  ASSERT_EQ(train.size(), ds.train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t k = 0; k < train[i].rgb.data.size(); ++k)
      ASSERT_NEAR(train[i].rgb.data[k], ds.train[i].rgb.data[k], 0.5 / 255 + 1e-12);
    EXPECT_LT((train[i].camera.world_to_camera.rotation - ds.train[i].camera.world_to_camera.rotation).norm(), 1e-9);
    for (int b = 0; b < train[i].pose.bone_count(); ++b)
      EXPECT_LT((train[i].pose.bones[b].rotation - ds.train[i].pose.bones[b].rotation).norm(), 1e-9);
  }
  EXPECT_EQ(load_template_mesh(dir.string()).faces(), ds.subject.mesh.faces());
}

TEST(ImageMetrics, Examples) {
  const Image a(16, 16, 3, 0.5), b(16, 16, 3, 0.6);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_NEAR(ssim_index(a, a), 1.0, 1e-12);
  EXPECT_LT(ssim_index(a, Image(16, 16, 3, 0.0)), 0.5);
  EXPECT_THROW(psnr(a, Image(16, 15, 3)), Error);
}

TEST(FractionWithin, Examples) {
  const TriangleMesh m = icosphere(3);
  std::vector<Vec3> pts = {Vec3(0, 0, 1.0), Vec3(0, 0, 1.05), Vec3(0, 0, 1.2), Vec3(0, 0, 0.0)};
  EXPECT_NEAR(fraction_within(pts, m, 0.1), 0.5, 1e-12);
  EXPECT_NEAR(fraction_within(pts, m, 1.1), 1.0, 1e-12);
}
