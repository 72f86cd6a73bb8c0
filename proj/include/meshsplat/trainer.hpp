#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "meshsplat/checkpoint.hpp"
#include "meshsplat/dataset.hpp"
#include "meshsplat/objectives.hpp"
#include "meshsplat/random.hpp"

namespace meshsplat {

struct TrainConfig {
  int total_iters = 3000;
  int adhered_iters = 600;

  double lr_bary = 2e-3;
  double lr_vertices = 1e-4;
  double lr_beta = 1e-3;
  double lr_scale = 5e-3;
  double lr_center = 1.6e-4;
  double lr_center_final = 1.6e-6;
  double lr_rotation = 1e-3;
  double lr_opacity = 5e-2;
  double lr_color = 2.5e-3;

  LossWeights weights;

  int densify_interval = 300;
  double densify_until = 0.8;  // fraction of total_iters
  int densify_tail = 600;      // never densify in the last this-many iterations
  double densify_grad = 2e-4;  // mean screen-space position gradient norm
  double prune_opacity = 0.005;
  double percent_dense = 0.01;  // clone below this fraction of the scene extent, split above
  std::size_t max_gaussians = 200000;

  std::size_t init_gaussians = 0;  // 0 -> one per face
  std::uint64_t seed = 0;
  int snapshot_interval = 0;  // 0 -> only the final checkpoint
  int log_interval = 10;
  Vec3 background = Vec3::Zero();
  bool check_invariants = true;
  int threads = 1;

  std::string dataset;
  std::string out_dir = "run";

  /// Sets one documented key; throws Error for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// key = value lines, '#' comments.
  void load_file(const std::string& path);
  void validate() const;
  /// Every key with its current value, one per line.
  std::string dump() const;
};

/// Area-proportional Gaussian placement (largest-remainder allocation), uniform
/// barycentrics and in-plane angles, s1 = s2 = sqrt(face area), opacity 0.5, gray.
AdheredSet init_scene(const TriangleMesh& mesh, std::size_t budget, std::uint64_t seed);

/// Adam moments for one flat parameter block.
struct AdamSlot {
  std::vector<double> m, v;
  std::uint64_t t = 0;
};

struct OptimizerState {
  std::map<std::string, AdamSlot> slots;
  // densification statistics
  std::vector<double> grad_accum;
  std::vector<double> grad_count;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-15;

/// In-place Adam update of `params` (size n) with `grad`.
void adam_update(AdamSlot& slot, double* params, const double* grad, std::size_t n, double lr);

/// Stage-1 structural invariants over a scene.
struct InvariantReport {
  double max_plane_residual = 0.0;  // |<center - v1, n_f>|
  double min_normal_dot = 1.0;      // |<R col 0, n_f>|
  double max_signed_height = 0.0;   // |signed_height|
  bool ok(double tol = 1e-9) const { return max_plane_residual < tol && min_normal_dot > 1.0 - tol && max_signed_height == 0.0; }
};
InvariantReport check_adhered_invariants(const Scene& scene);

/// Post-update maintenance: retraction / renormalization of adhered barycentrics, or
/// walk_batch plus quaternion renormalization for detached Gaussians.
void maintain_bindings(Scene& scene);

struct DensifyStats {
  std::size_t pruned = 0, split = 0, cloned = 0;
};

/// Prunes low-opacity Gaussians, splits large high-gradient ones along their
/// largest axis and clones small high-gradient ones. `state` is kept aligned.
DensifyStats densify_and_prune(Scene& scene, OptimizerState& state, const TrainConfig& cfg, double scene_extent);

/// Splits Gaussian i into two children along its largest axis (returned pair
/// replaces the parent); exposed for tests.
std::pair<DetachedGaussian, DetachedGaussian> split_gaussian(const DetachedGaussian& g);
std::pair<AdheredGaussian, AdheredGaussian> split_gaussian(const AdheredGaussian& g, const TriangleMesh& mesh);

/// One optimizer step on one frame: render, loss, backward, Adam, maintenance.
LossRecord train_step(Scene& scene, const Frame& frame, const TrainConfig& cfg, OptimizerState& state, int iteration);

/// Stateful driver for the full two-stage schedule.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Frame> frames, Scene scene);
  /// Restores scene, iteration and optimizer state.
  Trainer(TrainConfig cfg, std::vector<Frame> frames, const Checkpoint& ckpt);

  /// Runs one iteration (detach and densify events included).
  LossRecord step();
  bool done() const { return iteration_ >= cfg_.total_iters; }
  int iteration() const { return iteration_; }
  const Scene& scene() const { return scene_; }
  const TrainConfig& config() const { return cfg_; }
  const InvariantReport& worst_invariants() const { return worst_; }
  std::size_t invariant_violations() const { return violations_; }
  const std::vector<std::pair<int, DensifyStats>>& densify_log() const { return densify_log_; }

  Checkpoint checkpoint() const;

 private:
  void check_inputs();

  TrainConfig cfg_;
  std::vector<Frame> frames_;
  Scene scene_;
  OptimizerState state_;
  int iteration_ = 0;
  double extent_ = 1.0;
  InvariantReport worst_;
  std::size_t violations_ = 0;
  std::vector<std::pair<int, DensifyStats>> densify_log_;
};

struct RunSummary {
  int iterations = 0;
  LossRecord last;
  std::size_t gaussians = 0;
  InvariantReport worst_invariants;
  std::size_t invariant_violations = 0;
  bool finite = true;
};

/// Trains to completion, writing loss.csv, snapshots and final.ckpt to cfg.out_dir.
/// If resume_path is non-empty training continues from that checkpoint.
RunSummary run(const TrainConfig& cfg, const std::vector<Frame>& frames, const TriangleMesh& mesh,
               const std::string& resume_path = "", const std::function<void(int, const LossRecord&)>& progress = {});

}  // namespace meshsplat
