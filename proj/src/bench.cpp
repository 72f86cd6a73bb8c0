#include "meshsplat/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "meshsplat/binding.hpp"
#include "meshsplat/random.hpp"
#include "meshsplat/synthetic.hpp"

namespace meshsplat {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TriangleMesh bench_mesh(int faces) {
  if (faces < 18) throw Error("bench_mesh: need at least 18 faces");
  // major / minor circumference ratio 2.5 keeps triangles close to isotropic
  const int nv = std::max(3, static_cast<int>(std::lround(std::sqrt(faces / 5.0))));
  const int nu = std::max(3, static_cast<int>(std::lround(faces / (2.0 * nv))));
  return torus(nu, nv, 1.0, 0.4);
}

WalkBenchResult run_walk_bench(const WalkBenchConfig& cfg) {
  if (cfg.gaussians < 1 || cfg.reps < 1 || cfg.baseline_reps < 1) throw Error("bench-walk: counts must be positive");
  if (!(cfg.out_fraction >= 0.0 && cfg.out_fraction <= 1.0)) throw Error("bench-walk: out_fraction must be in [0, 1]");
  const TriangleMesh mesh = bench_mesh(cfg.faces);
  const double edge = mesh.mean_edge_length();
  Rng rng(cfg.seed);

  const std::size_t n = static_cast<std::size_t>(cfg.gaussians);
  const std::size_t n_out = static_cast<std::size_t>(std::llround(cfg.out_fraction * n));
  std::vector<BindingRecord> start(n);
  std::vector<Vec3> centers(n);
  for (std::size_t i = 0; i < n; ++i) {
    BindingRecord& b = start[i];
    b.face = static_cast<int>(rng.next() % mesh.face_count());
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    b.bary = {1.0 - r1, r1 * (1.0 - r2), r1 * r2};
    const auto c = mesh.corners(b.face);
    const Vec3 x = b.bary.a1 * c[0] + b.bary.a2 * c[1] + b.bary.a3 * c[2];
    const Vec3 nrm = mesh.face_normal(b.face);
    const Vec3 t1 = (c[1] - c[0]).normalized(), t2 = nrm.cross(t1);
    // displaced Gaussians move far enough to leave their face, the rest stay inside
    for (int attempt = 0;; ++attempt) {
      const double ang = rng.uniform(0.0, 6.283185307179586);
      const double step = i < n_out ? edge * rng.uniform(0.6, 1.0) : edge * 1e-3 * rng.uniform();
      const Vec3 y = x + step * (std::cos(ang) * t1 + std::sin(ang) * t2) + 1e-3 * edge * nrm;
      const bool outside = out_of_triangle(project_to_triangle(y, mesh, b.face));
      if (outside == (i < n_out) || attempt > 100) {
        centers[i] = y;
        break;
      }
    }
  }

  // stored face by face, the order init_scene produces
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return start[a].face < start[b].face; });
  {
    std::vector<BindingRecord> s(n);
    std::vector<Vec3> c(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = start[order[i]];
      c[i] = centers[order[i]];
    }
    start.swap(s);
    centers.swap(c);
  }

  WalkBenchResult res;
  res.faces = mesh.face_count();
  res.gaussians = n;
  std::vector<double> walk_times;
  std::vector<BindingRecord> walked;
  for (int r = 0; r < cfg.reps; ++r) {
    walked = start;
    const auto t0 = std::chrono::steady_clock::now();
    const WalkStats st = walk_batch(centers, mesh, walked);
    walk_times.push_back(elapsed_ms(t0));
    res.outside = st.outside;
  }
  res.walk_ms = median(walk_times);

  std::vector<std::size_t> out_ids;
  for (std::size_t i = 0; i < n; ++i)
    if (out_of_triangle(project_to_triangle(centers[i], mesh, start[i].face))) out_ids.push_back(i);
  std::vector<double> base_times;
  std::vector<int> nearest(out_ids.size());
  for (int r = 0; r < cfg.baseline_reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < out_ids.size(); ++k) nearest[k] = nearest_face_exhaustive(centers[out_ids[k]], mesh);
    base_times.push_back(elapsed_ms(t0));
  }
  res.baseline_ms = median(base_times);
  res.speedup = res.walk_ms > 0.0 ? res.baseline_ms / res.walk_ms : 0.0;
  std::size_t same = 0;
  for (std::size_t k = 0; k < out_ids.size(); ++k) same += walked[out_ids[k]].face == nearest[k];
  res.agreement = out_ids.empty() ? 1.0 : static_cast<double>(same) / out_ids.size();
  return res;
}

}  // namespace meshsplat
