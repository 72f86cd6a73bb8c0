#pragma once

#include <cstdint>

#include "meshsplat/mesh.hpp"

namespace meshsplat {

struct WalkBenchConfig {
  int faces = 13000;      // approximate torus face count
  int gaussians = 30000;
  double out_fraction = 0.05;  // share displaced across an edge
  int reps = 50;
  int baseline_reps = 5;  // exhaustive search is slow; median over fewer runs
  std::uint64_t seed = 0;
};

struct WalkBenchResult {
  std::size_t faces = 0;
  std::size_t gaussians = 0;
  std::size_t outside = 0;        // out-of-triangle Gaussians seen by walk_batch
  double walk_ms = 0.0;           // median walk_batch wall time
  double baseline_ms = 0.0;       // median exhaustive nearest-face time for the same Gaussians
  double speedup = 0.0;
  double agreement = 0.0;         // share of out-of-triangle Gaussians where both pick the same face
};

/// Torus mesh with roughly cfg.faces faces.
TriangleMesh bench_mesh(int faces);
WalkBenchResult run_walk_bench(const WalkBenchConfig& cfg);

}  // namespace meshsplat
