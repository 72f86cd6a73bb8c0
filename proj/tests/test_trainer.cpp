#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "meshsplat/checkpoint.hpp"
#include "meshsplat/render.hpp"
#include "meshsplat/trainer.hpp"
#include "test_util.hpp"

using namespace meshsplat;
using namespace meshsplat::testing;

namespace {

/// n x n grid of unit squares, each split into two equal right triangles.
TriangleMesh uniform_grid(int n) {
  std::vector<Vec3> v;
  std::vector<Face> f;
  for (int y = 0; y <= n; ++y)
    for (int x = 0; x <= n; ++x) v.emplace_back(x, y, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int a = y * (n + 1) + x, b = a + 1, c = a + n + 1, d = c + 1;
      f.push_back({a, b, d});
      f.push_back({a, d, c});
    }
  return TriangleMesh(v, f);
}

const SyntheticDataset& tiny_dataset() {
  static const SyntheticDataset ds = [] {
    GenerateConfig g;
    g.bones = 2;
    g.frames = 4;
    g.test_views = 0;
    g.width = g.height = 32;
    g.fx = 65;
    g.supersample = 2;
    return generate(g);
  }();
  return ds;
}

TrainConfig tiny_config(const std::string& out) {
  TrainConfig c;
  c.total_iters = 20;
  c.adhered_iters = 8;
  c.densify_interval = 5;
  c.densify_tail = 2;
  c.densify_grad = 1e-6;
  c.init_gaussians = 300;
  c.log_interval = 1;
  c.out_dir = out;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// One large triangle facing a 1x1-pixel camera with a single adhered Gaussian at its centroid.
Scene single_gaussian_scene() {
  Scene s;
  s.mesh = TriangleMesh({{-1, -1, 0}, {2, -1, 0}, {-1, 2, 0}}, {{0, 1, 2}});
  AdheredGaussian g;
  g.binding.bary = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  g.log_scale = Vec2::Constant(std::log(0.3));
  g.opacity_logit = 10.0;
  s.adhered.push_back(g);
  return s;
}

}  // namespace

TEST(InitScene, OnePerFaceOnUniformMesh) {
  const TriangleMesh m = uniform_grid(6);
  const AdheredSet s = init_scene(m, m.face_count(), 3);
  ASSERT_EQ(s.size(), m.face_count());
  std::vector<int> hits(m.face_count(), 0);
  for (const auto& b : s.binding) ++hits[static_cast<std::size_t>(b.face)];
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(InitScene, CountsFollowArea) {
  Rng rng(91);
  const TriangleMesh m = noisy_sphere(rng, 2, 0.3);
  const std::size_t n = 20000;
  const AdheredSet s = init_scene(m, n, 5);
  ASSERT_EQ(s.size(), n);
  std::vector<double> count(m.face_count(), 0.0);
  for (const auto& b : s.binding) count[static_cast<std::size_t>(b.face)] += 1.0;
  double total_area = 0.0;
  for (double a : m.face_areas()) total_area += a;
  double chi2 = 0.0;
  for (std::size_t f = 0; f < m.face_count(); ++f) {
    const double e = n * m.face_area(static_cast<int>(f)) / total_area;
    chi2 += (count[f] - e) * (count[f] - e) / e;
  }
  const double dof = static_cast<double>(m.face_count() - 1);
  EXPECT_LT(chi2, dof + 3.0 * std::sqrt(2.0 * dof));
}

TEST(InitScene, Attributes) {
  Rng rng(92);
  const TriangleMesh m = noisy_sphere(rng);
  const AdheredSet s = init_scene(m, 500, 7);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& b = s.binding[i].bary;
    EXPECT_GE(std::min({b.a1, b.a2, b.a3}), 0.0);
    EXPECT_NEAR(b.sum(), 1.0, 1e-12);
    EXPECT_NEAR(std::exp(s.log_scale[i].x()), std::sqrt(m.face_area(s.binding[i].face)), 1e-12);
    EXPECT_EQ(s.log_scale[i].x(), s.log_scale[i].y());
    EXPECT_EQ(sigmoid(s.opacity_logit[i]), 0.5);
    EXPECT_EQ(sigmoid(s.color_logit[i]), Vec3::Constant(0.5));
    EXPECT_GE(s.beta[i], 0.0);
    EXPECT_LT(s.beta[i], M_PI);
  }
}

TEST(InitScene, SeededAndValidated) {
  Rng rng(93);
  const TriangleMesh m = noisy_sphere(rng);
  const AdheredSet a = init_scene(m, 300, 11), b = init_scene(m, 300, 11);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.binding[i].bary.vec(), b.binding[i].bary.vec());
    EXPECT_EQ(a.beta[i], b.beta[i]);
  }
  EXPECT_THROW(init_scene(m, 0, 1), Error);
}

TEST(TrainStep, ZeroLearningRatesLeaveSceneUnchanged) {
  const auto& ds = tiny_dataset();
  TrainConfig cfg = tiny_config("unused");
  for (double* lr : {&cfg.lr_bary, &cfg.lr_vertices, &cfg.lr_beta, &cfg.lr_scale, &cfg.lr_center, &cfg.lr_center_final,
                     &cfg.lr_rotation, &cfg.lr_opacity, &cfg.lr_color})
    *lr = 0.0;
  Scene scene;
  scene.mesh = ds.subject.mesh;
  scene.adhered = init_scene(scene.mesh, 200, 1);
  const Scene before = scene;
  OptimizerState state;
  for (int it = 0; it < 3; ++it) train_step(scene, ds.train[0], cfg, state, it);
  EXPECT_EQ(scene.mesh.vertices(), before.mesh.vertices());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    EXPECT_LT((scene.adhered.binding[i].bary.vec() - before.adhered.binding[i].bary.vec()).norm(), 1e-15);
    EXPECT_EQ(scene.adhered.log_scale[i], before.adhered.log_scale[i]);
    EXPECT_EQ(scene.adhered.opacity_logit[i], before.adhered.opacity_logit[i]);
    EXPECT_EQ(scene.adhered.color_logit[i], before.adhered.color_logit[i]);
  }
}

TEST(TrainStep, SinglePixelColorConverges) {
  Scene scene = single_gaussian_scene();
  Frame frame;
  frame.camera = look_at({0, 0, 2}, Vec3::Zero(), {0, 1, 0}, 10, 10, 1, 1);
  frame.rgb = Image(1, 1, 3);
  frame.rgb.data = {0.6, 0.2, 0.4};
  frame.mask = Image(1, 1, 1, 1.0);
  TrainConfig cfg;
  cfg.weights = LossWeights{0, 0, 0, 0, 0, 0};
  cfg.lr_color = 0.02;
  cfg.lr_bary = cfg.lr_vertices = cfg.lr_beta = cfg.lr_scale = cfg.lr_opacity = 0.0;
  OptimizerState state;
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 200; ++it) {
    const LossRecord r = train_step(scene, frame, cfg, state, it);
    if (it == 0) first = r.total;
    last = r.total;
  }
  FrameBuffer fb = render(scene, Pose{}, frame.camera);
  const double final_loss = (std::abs(fb.rgb[0] - 0.6) + std::abs(fb.rgb[1] - 0.2) + std::abs(fb.rgb[2] - 0.4)) / 3.0;
  EXPECT_GT(first, 0.1);
  EXPECT_LT(last, 1e-2);
  EXPECT_LT(final_loss, 1e-3);
}

TEST(TrainStep, NonFiniteLossThrows) {
  Scene scene = single_gaussian_scene();
  Frame frame;
  frame.camera = look_at({0, 0, 2}, Vec3::Zero(), {0, 1, 0}, 10, 10, 1, 1);
  frame.rgb = Image(1, 1, 3);
  frame.rgb.data = {NAN, 0.2, 0.4};
  frame.mask = Image(1, 1, 1, 1.0);
  TrainConfig cfg;
  cfg.weights = LossWeights{0, 0, 0, 0, 0, 0};
  OptimizerState state;
  EXPECT_THROW(train_step(scene, frame, cfg, state, 0), Error);
}

TEST(TrainStep, AdheredInvariantsHoldAfterSteps) {
  const auto& ds = tiny_dataset();
  TrainConfig cfg = tiny_config("unused");
  cfg.lr_bary = 0.05;  // push plenty of barycentrics out of their triangles
  Scene scene;
  scene.mesh = ds.subject.mesh;
  scene.adhered = init_scene(scene.mesh, 300, 2);
  OptimizerState state;
  for (int it = 0; it < 10; ++it) {
    train_step(scene, ds.train[static_cast<std::size_t>(it) % ds.train.size()], cfg, state, it);
    const InvariantReport r = check_adhered_invariants(scene);
    EXPECT_TRUE(r.ok()) << r.max_plane_residual << " " << r.min_normal_dot;
    for (const auto& b : scene.adhered.binding) ASSERT_FALSE(out_of_triangle(b.bary));
  }
}

TEST(Densify, QuietSceneIsUnchanged) {
  Rng rng(94);
  Scene scene;
  scene.mesh = noisy_sphere(rng);
  scene.adhered = init_scene(scene.mesh, 100, 3);
  for (double& o : scene.adhered.opacity_logit) o = logit(0.9);
  OptimizerState state;
  state.grad_accum.assign(100, 1e-9);
  state.grad_count.assign(100, 1.0);
  const DensifyStats st = densify_and_prune(scene, state, TrainConfig{}, 2.0);
  EXPECT_EQ(st.pruned + st.split + st.cloned, 0u);
  EXPECT_EQ(scene.size(), 100u);
}

TEST(Densify, PrunesTransparent) {
  Rng rng(95);
  Scene scene;
  scene.mesh = noisy_sphere(rng);
  scene.stage = Stage::Detached;
  scene.detached = detach(init_scene(scene.mesh, 50, 3), scene.mesh);
  scene.detached.opacity_logit[17] = logit(0.001);
  const Vec3 next = scene.detached.center[18];
  OptimizerState state;
  const DensifyStats st = densify_and_prune(scene, state, TrainConfig{}, 2.0);
  EXPECT_EQ(st.pruned, 1u);
  EXPECT_EQ(scene.size(), 49u);
  EXPECT_EQ(scene.detached.center[17], next);
}

TEST(Densify, SplitKeepsFootprint) {
  Rng rng(96);
  const Camera cam = look_at({0, 0, 3}, Vec3::Zero(), {0, 1, 0}, 120, 120, 64, 64);
  for (int t = 0; t < 10; ++t) {
    Scene scene;
    scene.mesh = icosphere(1);
    scene.stage = Stage::Detached;
    DetachedGaussian g;
    g.center = 0.1 * random_vec(rng);
    g.log_scale = Vec3(std::log(rng.uniform(0.05, 0.3)), std::log(rng.uniform(0.02, 0.1)), std::log(0.02));
    g.rotation = rotation_to_quat(random_rotation(rng));
    g.opacity_logit = logit(rng.uniform(0.2, 0.8));
    g.color_logit = Vec3(1, -1, 0.5);
    scene.detached.push_back(g);
    const FrameBuffer parent = render(scene, Pose{}, cam);
    const auto [a, b] = split_gaussian(g);
    scene.detached = {};
    scene.detached.push_back(a);
    scene.detached.push_back(b);
    const FrameBuffer kids = render(scene, Pose{}, cam);
    double worst = 0.0;
    for (std::size_t i = 0; i < parent.rgb.size(); ++i) worst = std::max(worst, std::abs(parent.rgb[i] - kids.rgb[i]));
    EXPECT_LT(worst, 5e-2);
  }
}

TEST(Densify, AdheredSplitStaysOnFace) {
  Rng rng(97);
  const TriangleMesh m = noisy_sphere(rng);
  const AdheredSet s = init_scene(m, 40, 9);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto [a, b] = split_gaussian(s.get(i), m);
    EXPECT_EQ(a.binding.face, s.binding[i].face);
    EXPECT_FALSE(out_of_triangle(a.binding.bary));
    EXPECT_FALSE(out_of_triangle(b.binding.bary));
  }
}

TEST(TrainConfig, ParsesAndRejects) {
  TrainConfig c;
  c.set("lambda_pa", "2.5");
  c.set("total_iters", "40");
  c.set("background", "1 0 0.5");
  EXPECT_EQ(c.weights.pa, 2.5);
  EXPECT_EQ(c.total_iters, 40);
  EXPECT_EQ(c.background, Vec3(1, 0, 0.5));
  EXPECT_THROW(c.set("no_such_key", "1"), Error);
  EXPECT_THROW(c.set("lr_color", "fast"), Error);
  EXPECT_THROW(c.set("total_iters", "1.5"), Error);
  EXPECT_THROW(c.set("check_invariants", "maybe"), Error);
  c.adhered_iters = 41;
  EXPECT_THROW(c.validate(), Error);
  c.adhered_iters = 40;
  EXPECT_NO_THROW(c.validate());
  c.lr_color = -1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TrainConfig, FileRoundTrip) {
  const auto dir = temp_dir("config");
  TrainConfig a;
  a.weights.lap = 0.25;
  a.lr_bary = 3e-3;
  a.seed = 17;
  a.background = Vec3(0.1, 0.2, 0.3);
  {
    std::ofstream out(dir / "cfg.txt");
    out << "# comment line\n" << a.dump();
  }
  TrainConfig b;
  b.load_file((dir / "cfg.txt").string());
  EXPECT_EQ(b.dump(), a.dump());
  {
    std::ofstream out(dir / "bad.txt");
    out << "lambda_pa = 1\nthis line has no equals\n";
  }
  EXPECT_THROW(b.load_file((dir / "bad.txt").string()), Error);
  EXPECT_THROW(b.load_file((dir / "missing.txt").string()), Error);
}

TEST(Trainer, RejectsBadInput) {
  const auto& ds = tiny_dataset();
  Scene scene;
  scene.mesh = ds.subject.mesh;
  scene.adhered = init_scene(scene.mesh, 50, 1);
  EXPECT_THROW(Trainer(tiny_config("x"), {}, scene), Error);
  std::vector<Frame> frames = ds.train;
  frames[1].pose = Pose::identity(5);
  EXPECT_THROW(Trainer(tiny_config("x"), frames, scene), Error);
}

TEST(Trainer, AdheredOnlyRunStaysAdhered) {
  const auto& ds = tiny_dataset();
  TrainConfig cfg = tiny_config(temp_dir("adhered_only").string());
  cfg.total_iters = cfg.adhered_iters = 6;
  const RunSummary s = run(cfg, ds.train, ds.subject.mesh);
  EXPECT_EQ(s.iterations, 6);
  EXPECT_EQ(s.invariant_violations, 0u);
  const Checkpoint ck = load_checkpoint(cfg.out_dir + "/final.ckpt");
  EXPECT_EQ(ck.scene.stage, Stage::Adhered);
  EXPECT_GT(ck.scene.adhered.size(), 0u);
}

TEST(Trainer, DetachesAndDensifies) {
  const auto& ds = tiny_dataset();
  Scene scene;
  scene.mesh = ds.subject.mesh;
  scene.adhered = init_scene(scene.mesh, 300, 0);
  Trainer t(tiny_config("unused"), ds.train, scene);
  while (!t.done()) {
    const LossRecord r = t.step();
    EXPECT_TRUE(std::isfinite(r.total));
    EXPECT_EQ(t.scene().stage, t.iteration() <= 8 ? Stage::Adhered : Stage::Detached);
  }
  EXPECT_FALSE(t.densify_log().empty());
  for (const auto& [it, st] : t.densify_log()) {
    EXPECT_EQ(it % 5, 0);
    EXPECT_LT(it, 16);
  }
  // binding consistency after the final walk
  const auto& d = t.scene().detached;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Barycentric p = project_to_triangle(d.center[i], t.scene().mesh, d.binding[i].face);
    EXPECT_LT((p.vec() - d.binding[i].bary.vec()).norm(), 1e-9);
  }
}

TEST(Trainer, ResumeIsBitwise) {
  const auto& ds = tiny_dataset();
  const auto root = temp_dir("resume");
  TrainConfig full = tiny_config((root / "full").string());
  run(full, ds.train, ds.subject.mesh);

  TrainConfig first = tiny_config((root / "part").string());
  first.snapshot_interval = 7;
  run(first, ds.train, ds.subject.mesh);
  TrainConfig second = tiny_config((root / "resumed").string());
  run(second, ds.train, ds.subject.mesh, (root / "part" / "ckpt_000007.ckpt").string());
  EXPECT_TRUE(slurp(root / "full" / "final.ckpt") == slurp(root / "resumed" / "final.ckpt"));

  TrainConfig again = tiny_config((root / "again").string());
  run(again, ds.train, ds.subject.mesh);
  EXPECT_TRUE(slurp(root / "full" / "final.ckpt") == slurp(root / "again" / "final.ckpt"));
}
