#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "meshsplat/bench.hpp"
#include "meshsplat/extraction.hpp"
#include "meshsplat/metrics.hpp"
#include "meshsplat/mesh_io.hpp"
#include "meshsplat/parallel.hpp"
#include "meshsplat/render.hpp"
#include "meshsplat/synthetic.hpp"
#include "meshsplat/trainer.hpp"

namespace fs = std::filesystem;
using namespace meshsplat;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  int threads = 1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value config file");
  app->add_option("--seed", c.seed, "random seed")->each([&](const std::string&) { c.seed_set = true; });
  app->add_option("--out-dir", c.out_dir, "output directory");
  app->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

void write_frame_pngs(const fs::path& dir, int index, const FrameBuffer& fb) {
  fs::create_directories(dir);
  const std::string base = (dir / frame_name(index)).string();
  save_png8(base + ".rgb.png", rgb_image(fb));
  save_png8(base + ".alpha.png", alpha_image(fb));
  save_png16(base + ".depth-x1000.png", depth_image(fb), kDepthPngScale);
}

int cmd_generate(const Common& c, const std::vector<std::string>& sets) {
  GenerateConfig cfg;
  if (!c.config.empty()) cfg.load_file(c.config);
  for (const auto& [k, v] : parse_overrides(sets)) cfg.set(k, v);
  if (c.seed_set) cfg.seed = c.seed;
  if (c.out_dir.empty()) throw Error("generate: --out-dir is required");
  const SyntheticDataset ds = generate(cfg);
  write_dataset(c.out_dir, ds, cfg);
  std::printf("wrote %zu train and %zu test frames, %zu faces, to %s\n", ds.train.size(), ds.test.size(),
              ds.subject.mesh.face_count(), c.out_dir.c_str());
  return 0;
}

int cmd_train(const Common& c, const std::string& dataset, const std::string& resume,
              const std::vector<std::string>& sets) {
  TrainConfig cfg;
  if (!c.config.empty()) cfg.load_file(c.config);
  for (const auto& [k, v] : parse_overrides(sets)) cfg.set(k, v);
  if (c.seed_set) cfg.seed = c.seed;
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  if (!dataset.empty()) cfg.dataset = dataset;
  cfg.threads = c.threads;
  if (cfg.dataset.empty()) throw Error("train: no dataset given (--dataset or 'dataset' config key)");
  const std::vector<Frame> frames = load_split(cfg.dataset, "train");
  const TriangleMesh mesh = load_template_mesh(cfg.dataset);
  const RunSummary sum = run(cfg, frames, mesh, resume, [](int it, const LossRecord& r) {
    std::printf("iter %6d  l1 %.5f  mask %.5f  ssim %.5f  pa %.3e  na %.4f  total %.5f\n", it, r.l1, r.mask,
                r.ssim, r.pa, r.na, r.total);
    std::fflush(stdout);
  });
  std::printf("done: %d iterations, %zu Gaussians, invariant violations %zu\n", sum.iterations, sum.gaussians,
              sum.invariant_violations);
  return 0;
}

int cmd_render(const Common& c, const std::string& ckpt_path, const std::string& dataset, const std::string& split) {
  if (c.out_dir.empty()) throw Error("render: --out-dir is required");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::vector<Frame> frames = load_split(dataset, split);
  for (std::size_t i = 0; i < frames.size(); ++i)
    write_frame_pngs(c.out_dir, static_cast<int>(i), render(ckpt.scene, frames[i].pose, frames[i].camera));
  std::printf("rendered %zu frames to %s\n", frames.size(), c.out_dir.c_str());
  return 0;
}

int cmd_animate(const Common& c, const std::string& ckpt_path, const std::string& poses_path,
                const std::string& cameras_path, int camera_index) {
  if (c.out_dir.empty()) throw Error("animate: --out-dir is required");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto poses = load_pose_sequence(poses_path);
  const auto cams = load_cameras(cameras_path);
  if (camera_index < 0 || camera_index >= static_cast<int>(cams.size()))
    throw Error("animate: camera index out of range");
  if (poses.empty()) {
    std::fprintf(stderr, "warning: pose sequence is empty, nothing rendered\n");
    return 0;
  }
  const Camera& cam = cams[static_cast<std::size_t>(camera_index)].second;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (poses[i].bone_count() != ckpt.scene.mesh.bone_count())
      throw Error("animate: pose bone count does not match the checkpoint mesh");
    write_frame_pngs(c.out_dir, static_cast<int>(i), render(ckpt.scene, poses[i], cam));
  }
  std::printf("rendered %zu frames to %s\n", poses.size(), c.out_dir.c_str());
  return 0;
}

int cmd_extract(const Common& c, const std::string& ckpt_path, const std::string& out, ExtractOptions opts,
                const std::string& dataset) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Pose pose = Pose::identity(ckpt.scene.mesh.bone_count());
  const TsdfVolume vol = fuse_scene(ckpt.scene, pose, opts);
  const TriangleMesh mesh = marching_cubes(vol);
  fs::path out_path = out;
  if (out_path.empty()) {
    if (c.out_dir.empty()) throw Error("extract-mesh: give --out or --out-dir");
    fs::create_directories(c.out_dir);
    out_path = fs::path(c.out_dir) / "extracted.obj";
  }
  if (mesh.empty()) std::fprintf(stderr, "warning: no surface crossing found, writing an empty mesh\n");
  save_mesh(mesh, out_path);
  std::printf("extracted %zu vertices, %zu faces, voxel %.6f m -> %s\n", mesh.vertex_count(), mesh.face_count(),
              vol.voxel_size, out_path.string().c_str());
  if (!dataset.empty() && fs::exists(fs::path(dataset) / "gt_mesh.obj") && !mesh.empty()) {
    const TriangleMesh gt = load_mesh(fs::path(dataset) / "gt_mesh.obj");
    std::printf("within 2 voxels of ground truth: %.4f\n", fraction_within(mesh.vertices(), gt, 2.0 * vol.voxel_size));
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt_path, const std::string& dataset, const std::string& split) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::vector<Frame> frames = load_split(dataset, split);
  const auto m = evaluate(ckpt.scene, frames);
  double mp = 0.0, ms = 0.0;
  std::printf("%6s %6s %9s %8s\n", "frame", "camera", "psnr_db", "ssim");
  for (const FrameMetrics& r : m) {
    std::printf("%6d %6d %9.3f %8.5f\n", r.index, r.camera_id, r.psnr, r.ssim);
    mp += r.psnr;
    ms += r.ssim;
  }
  mp /= m.size();
  ms /= m.size();
  std::printf("%6s %6s %9.3f %8.5f\n", "mean", "", mp, ms);
  if (!c.out_dir.empty()) {
    fs::create_directories(c.out_dir);
    std::ofstream csv(fs::path(c.out_dir) / ("metrics_" + split + ".csv"));
    csv.precision(10);
    csv << "frame,camera_id,psnr,ssim\n";
    for (const FrameMetrics& r : m) csv << r.index << ',' << r.camera_id << ',' << r.psnr << ',' << r.ssim << '\n';
    csv << "mean,," << mp << ',' << ms << '\n';
  }
  return 0;
}

int cmd_bench(const Common& c, WalkBenchConfig cfg, bool scaling) {
  if (c.seed_set) cfg.seed = c.seed;
  auto report = [](const WalkBenchResult& r) {
    std::printf("faces %zu  gaussians %zu  outside %zu  walk %.3f ms  exhaustive %.3f ms  speedup %.1fx  agree %.4f\n",
                r.faces, r.gaussians, r.outside, r.walk_ms, r.baseline_ms, r.speedup, r.agreement);
  };
  const WalkBenchResult a = run_walk_bench(cfg);
  report(a);
  if (scaling) {
    WalkBenchConfig d = cfg;
    d.faces *= 2;
    const WalkBenchResult b = run_walk_bench(d);
    report(b);
    std::printf("doubling faces: walk ratio %.3f  exhaustive ratio %.3f\n", b.walk_ms / a.walk_ms,
                b.baseline_ms / a.baseline_ms);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mesh-bound Gaussian splatting avatars"};
  app.require_subcommand(1);
  Common common;
  std::vector<std::string> sets;

  auto* gen = app.add_subcommand("generate", "Write a synthetic multi-view dataset");
  add_common(gen, common);
  gen->add_option("--set", sets, "override a config key (key=value)");

  std::string dataset, resume, ckpt, split = "test", poses, cameras, out;
  int camera_index = 0;
  auto* train = app.add_subcommand("train", "Two-stage optimization on a dataset");
  add_common(train, common);
  train->add_option("--dataset", dataset, "dataset root");
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--set", sets, "override a config key (key=value)");

  auto* rend = app.add_subcommand("render", "Render a dataset split with a checkpoint");
  add_common(rend, common);
  rend->add_option("--checkpoint", ckpt)->required();
  rend->add_option("--dataset", dataset)->required();
  rend->add_option("--split", split);

  auto* anim = app.add_subcommand("animate", "Render a pose sequence");
  add_common(anim, common);
  anim->add_option("--checkpoint", ckpt)->required();
  anim->add_option("--poses", poses, "pose sequence file")->required();
  anim->add_option("--cameras", cameras, "cameras.txt to take the camera from")->required();
  anim->add_option("--camera-index", camera_index, "line of cameras.txt to use");

  ExtractOptions xo;
  auto* ext = app.add_subcommand("extract-mesh", "TSDF-fuse rendered depth and run marching cubes");
  add_common(ext, common);
  ext->add_option("--checkpoint", ckpt)->required();
  ext->add_option("--out", out, "output OBJ or PLY");
  ext->add_option("--dataset", dataset, "dataset with gt_mesh.obj to score against");
  ext->add_option("--cameras", xo.cameras);
  ext->add_option("--radius-factor", xo.radius_factor);
  ext->add_option("--resolution", xo.resolution);
  ext->add_option("--margin", xo.margin);
  ext->add_option("--truncation-voxels", xo.truncation_voxels);
  ext->add_option("--alpha-threshold", xo.alpha_threshold);
  ext->add_option("--image-size", xo.image_size);
  ext->add_option("--depth", xo.depth, "per-pixel depth: median or expected")
      ->transform(CLI::CheckedTransformer(std::map<std::string, DepthEstimator>{
          {"median", DepthEstimator::Median}, {"expected", DepthEstimator::Expected}}));

  auto* ev = app.add_subcommand("eval", "PSNR and SSIM on a dataset split");
  add_common(ev, common);
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--dataset", dataset)->required();
  ev->add_option("--split", split);

  WalkBenchConfig bc;
  bool scaling = false;
  auto* bench = app.add_subcommand("bench-walk", "Time walk_batch against exhaustive nearest-face search");
  add_common(bench, common);
  bench->add_option("--faces", bc.faces);
  bench->add_option("--gaussians", bc.gaussians);
  bench->add_option("--out-fraction", bc.out_fraction);
  bench->add_option("--reps", bc.reps);
  bench->add_option("--baseline-reps", bc.baseline_reps);
  bench->add_flag("--scaling", scaling, "also run at twice the face count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    set_thread_count(common.threads);
    if (*gen) return cmd_generate(common, sets);
    if (*train) return cmd_train(common, dataset, resume, sets);
    if (*rend) return cmd_render(common, ckpt, dataset, split);
    if (*anim) return cmd_animate(common, ckpt, poses, cameras, camera_index);
    if (*ext) return cmd_extract(common, ckpt, out, xo, dataset);
    if (*ev) return cmd_eval(common, ckpt, dataset, split);
    if (*bench) return cmd_bench(common, bc, scaling);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
