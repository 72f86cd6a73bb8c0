#include "meshsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "meshsplat/binding.hpp"
#include "meshsplat/parallel.hpp"

namespace fs = std::filesystem;

namespace meshsplat {

// ---------------------------------------------------------------------------
// Config

namespace {

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected a number, got '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(d)) throw Error("config key '" + key + "': expected a number, got '" + v + "'");
  return d;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw Error("config key '" + key + "': expected an integer, got '" + v + "'");
  return i;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw Error("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  const std::string& v = value;
  auto d = [&] { return parse_double(key, v); };
  auto i = [&] { return parse_int(key, v); };
  if (key == "total_iters") total_iters = static_cast<int>(i());
  else if (key == "adhered_iters") adhered_iters = static_cast<int>(i());
  else if (key == "lr_bary") lr_bary = d();
  else if (key == "lr_vertices") lr_vertices = d();
  else if (key == "lr_beta") lr_beta = d();
  else if (key == "lr_scale") lr_scale = d();
  else if (key == "lr_center") lr_center = d();
  else if (key == "lr_center_final") lr_center_final = d();
  else if (key == "lr_rotation") lr_rotation = d();
  else if (key == "lr_opacity") lr_opacity = d();
  else if (key == "lr_color") lr_color = d();
  else if (key == "lambda_mask") weights.mask = d();
  else if (key == "lambda_ssim") weights.ssim = d();
  else if (key == "lambda_pa") weights.pa = d();
  else if (key == "lambda_na") weights.na = d();
  else if (key == "lambda_lap") weights.lap = d();
  else if (key == "lambda_normal") weights.normal = d();
  else if (key == "densify_interval") densify_interval = static_cast<int>(i());
  else if (key == "densify_until") densify_until = d();
  else if (key == "densify_tail") densify_tail = static_cast<int>(i());
  else if (key == "densify_grad") densify_grad = d();
  else if (key == "prune_opacity") prune_opacity = d();
  else if (key == "percent_dense") percent_dense = d();
  else if (key == "max_gaussians") max_gaussians = static_cast<std::size_t>(i());
  else if (key == "init_gaussians") init_gaussians = static_cast<std::size_t>(i());
  else if (key == "seed") seed = static_cast<std::uint64_t>(i());
  else if (key == "snapshot_interval") snapshot_interval = static_cast<int>(i());
  else if (key == "log_interval") log_interval = static_cast<int>(i());
  else if (key == "check_invariants") check_invariants = parse_bool(key, v);
  else if (key == "threads") threads = static_cast<int>(i());
  else if (key == "dataset") dataset = v;
  else if (key == "out_dir") out_dir = v;
  else if (key == "background") {
    std::string s = v;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream ss(s);
    Vec3 bg;
    if (!(ss >> bg.x() >> bg.y() >> bg.z())) throw Error("config key 'background': expected three numbers");
    background = bg;
  } else {
    throw Error("unknown config key '" + key + "'");
  }
}

void TrainConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(path + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void TrainConfig::validate() const {
  if (total_iters < 0) throw Error("total_iters must be nonnegative");
  if (adhered_iters < 0 || adhered_iters > total_iters) throw Error("adhered_iters must lie in [0, total_iters]");
  for (double lr : {lr_bary, lr_vertices, lr_beta, lr_scale, lr_center, lr_center_final, lr_rotation, lr_opacity,
                    lr_color})
    if (!(lr >= 0.0 && std::isfinite(lr))) throw Error("learning rates must be finite and nonnegative");
  weights.validate();
  if (densify_interval < 0) throw Error("densify_interval must be nonnegative");
  if (threads < 1) throw Error("threads must be at least 1");
  if (!background.allFinite()) throw Error("background must be finite");
}

std::string TrainConfig::dump() const {
  std::ostringstream o;
  o.precision(17);
  o << "total_iters = " << total_iters << "\nadhered_iters = " << adhered_iters << "\nlr_bary = " << lr_bary
    << "\nlr_vertices = " << lr_vertices << "\nlr_beta = " << lr_beta << "\nlr_scale = " << lr_scale
    << "\nlr_center = " << lr_center << "\nlr_center_final = " << lr_center_final << "\nlr_rotation = " << lr_rotation
    << "\nlr_opacity = " << lr_opacity << "\nlr_color = " << lr_color << "\nlambda_mask = " << weights.mask
    << "\nlambda_ssim = " << weights.ssim << "\nlambda_pa = " << weights.pa << "\nlambda_na = " << weights.na
    << "\nlambda_lap = " << weights.lap << "\nlambda_normal = " << weights.normal
    << "\ndensify_interval = " << densify_interval << "\ndensify_until = " << densify_until
    << "\ndensify_tail = " << densify_tail << "\ndensify_grad = " << densify_grad
    << "\nprune_opacity = " << prune_opacity << "\npercent_dense = " << percent_dense
    << "\nmax_gaussians = " << max_gaussians << "\ninit_gaussians = " << init_gaussians << "\nseed = " << seed
    << "\nsnapshot_interval = " << snapshot_interval << "\nlog_interval = " << log_interval << "\nbackground = "
    << background.x() << ' ' << background.y() << ' ' << background.z()
    << "\ncheck_invariants = " << (check_invariants ? "true" : "false") << "\nthreads = " << threads
    << "\ndataset = " << dataset << "\nout_dir = " << out_dir << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Initialization

AdheredSet init_scene(const TriangleMesh& mesh, std::size_t budget, std::uint64_t seed) {
  if (budget == 0) throw Error("init_scene: zero Gaussian budget");
  if (mesh.empty()) throw Error("init_scene: empty mesh");
  const std::size_t nf = mesh.face_count();
  const auto& areas = mesh.face_areas();
  const double total = std::accumulate(areas.begin(), areas.end(), 0.0);

  // largest-remainder apportionment, ties to the lower face id
  std::vector<std::size_t> count(nf);
  std::vector<std::pair<double, std::size_t>> rem(nf);
  std::size_t assigned = 0;
  for (std::size_t f = 0; f < nf; ++f) {
    const double q = static_cast<double>(budget) * areas[f] / total;
    count[f] = static_cast<std::size_t>(std::floor(q));
    assigned += count[f];
    rem[f] = {q - std::floor(q), f};
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < budget; ++k, ++assigned) ++count[rem[k % nf].second];

  Rng rng(seed);
  AdheredSet set;
  for (std::size_t f = 0; f < nf; ++f) {
    const double s = std::clamp(std::sqrt(areas[f]), kMinTangentialScale, kMaxScale);
    for (std::size_t k = 0; k < count[f]; ++k) {
      const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
      AdheredGaussian g;
      g.binding.face = static_cast<int>(f);
      g.binding.bary = {1.0 - r1, r1 * (1.0 - r2), r1 * r2};
      g.beta = rng.uniform(0.0, 3.141592653589793);
      g.log_scale = Vec2::Constant(std::log(s));
      g.opacity_logit = 0.0;
      g.color_logit = Vec3::Zero();
      set.push_back(g);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_update(AdamSlot& slot, double* p, const double* g, std::size_t n, double lr) {
  if (slot.m.size() != n) {
    slot.m.assign(n, 0.0);
    slot.v.assign(n, 0.0);
    slot.t = 0;
  }
  ++slot.t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(slot.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(slot.t));
  for (std::size_t i = 0; i < n; ++i) {
    slot.m[i] = kAdamBeta1 * slot.m[i] + (1.0 - kAdamBeta1) * g[i];
    slot.v[i] = kAdamBeta2 * slot.v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
    p[i] -= lr * (slot.m[i] / bc1) / (std::sqrt(slot.v[i] / bc2) + kAdamEps);
  }
}

namespace {

template <typename V>
double* flat(std::vector<V>& v) {
  return v.empty() ? nullptr : v[0].data();
}
template <typename V>
const double* flat(const std::vector<V>& v) {
  return v.empty() ? nullptr : v[0].data();
}

// Per-Gaussian slots and their widths.
const std::vector<std::pair<std::string, int>>& gaussian_slots() {
  static const std::vector<std::pair<std::string, int>> slots = {
      {"a.bary", 3}, {"a.log_scale", 2}, {"a.beta", 1}, {"d.center", 3},
      {"d.log_scale", 3}, {"d.rotation", 4}, {"opacity", 1}, {"color", 3}};
  return slots;
}

double center_lr(const TrainConfig& cfg, int iteration) {
  const int span = cfg.total_iters - cfg.adhered_iters;
  if (span <= 0 || cfg.lr_center <= 0.0 || cfg.lr_center_final <= 0.0) return cfg.lr_center;
  const double t = std::clamp(static_cast<double>(iteration - cfg.adhered_iters) / span, 0.0, 1.0);
  return std::exp((1.0 - t) * std::log(cfg.lr_center) + t * std::log(cfg.lr_center_final));
}

}  // namespace

// ---------------------------------------------------------------------------
// Maintenance and invariants

void maintain_bindings(Scene& scene) {
  if (scene.stage == Stage::Adhered) {
    auto& bindings = scene.adhered.binding;
    parallel_for(bindings.size(), [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        Barycentric& a = bindings[i].bary;
        const double sum = a.sum();
        if (sum == 0.0 || out_of_triangle(a)) {
          a = retract(a);
        } else {
          a = {a.a1 / sum, a.a2 / sum, a.a3 / sum};
        }
        bindings[i].signed_height = 0.0;
      }
    });
  } else {
    DetachedSet& d = scene.detached;
    walk_batch(d.center, scene.mesh, d.binding);
    for (Vec4& q : d.rotation) q.normalize();
  }
}

InvariantReport check_adhered_invariants(const Scene& scene) {
  InvariantReport rep;
  if (scene.stage != Stage::Adhered) return rep;
  const AdheredSet& s = scene.adhered;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = scene.mesh.corners(s.binding[i].face);
    const Vec3 n = (c[1] - c[0]).cross(c[2] - c[0]).normalized();
    const Barycentric& a = s.binding[i].bary;
    const Vec3 x = a.a1 * c[0] + a.a2 * c[1] + a.a3 * c[2];
    rep.max_plane_residual = std::max(rep.max_plane_residual, std::abs((x - c[0]).dot(n)));
    const Mat3 r = adhered_rotation(c, s.beta[i]);
    rep.min_normal_dot = std::min(rep.min_normal_dot, std::abs(r.col(0).dot(n)));
    rep.max_signed_height = std::max(rep.max_signed_height, std::abs(s.binding[i].signed_height));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Density control

namespace {

constexpr double kSplitOffset = 0.4;  // child offset along the split axis, in parent sigmas

// Child opacity minimizing the worst alpha mismatch against the parent, sampled along
// the split axis (parent sigma units) at a few amplitudes for the off-axis falloff.
double split_opacity(double parent, double child_sigma_ratio) {
  const auto worst = [&](double c) {
    double e = 0.0;
    for (double amp : {1.0, 0.75, 0.5, 0.25})
      for (int k = -80; k <= 80; ++k) {
        const double x = k / 20.0;
        const double r = 2.0 * child_sigma_ratio * child_sigma_ratio;
        const double g1 = std::exp(-(x - kSplitOffset) * (x - kSplitOffset) / r);
        const double g2 = std::exp(-(x + kSplitOffset) * (x + kSplitOffset) / r);
        const double kids = 1.0 - (1.0 - amp * c * g1) * (1.0 - amp * c * g2);
        e = std::max(e, std::abs(kids - amp * parent * std::exp(-0.5 * x * x)));
      }
    return e;
  };
  double lo = 0.0, hi = 0.99;
  for (int it = 0; it < 60; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (worst(m1) <= worst(m2)) hi = m2;
    else lo = m1;
  }
  return std::max(0.5 * (lo + hi), 1e-6);
}

}  // namespace

std::pair<DetachedGaussian, DetachedGaussian> split_gaussian(const DetachedGaussian& g) {
  const Vec3 s = detached_scales(g.log_scale);
  int k = 0;
  if (s[1] > s[k]) k = 1;
  if (s[2] > s[k]) k = 2;
  const Vec3 axis = quat_to_rotation(g.rotation).col(k);
  const double ratio = std::sqrt(1.0 - kSplitOffset * kSplitOffset);
  DetachedGaussian a = g, b = g;
  a.center = g.center + kSplitOffset * s[k] * axis;
  b.center = g.center - kSplitOffset * s[k] * axis;
  a.log_scale[k] = b.log_scale[k] = std::log(s[k] * ratio);
  a.opacity_logit = b.opacity_logit = logit(split_opacity(sigmoid(g.opacity_logit), ratio));
  return {a, b};
}

std::pair<AdheredGaussian, AdheredGaussian> split_gaussian(const AdheredGaussian& g, const TriangleMesh& mesh) {
  const Vec3 s = adhered_scales(g.log_scale);
  const int k = s[2] > s[1] ? 2 : 1;
  const Vec3 axis = adhered_rotation(g, mesh).col(k);
  const Vec3 x = adhered_center(g, mesh);
  const double ratio = std::sqrt(1.0 - kSplitOffset * kSplitOffset);
  AdheredGaussian a = g, b = g;
  a.binding.bary = project_to_triangle(x + kSplitOffset * s[k] * axis, mesh, g.binding.face);
  b.binding.bary = project_to_triangle(x - kSplitOffset * s[k] * axis, mesh, g.binding.face);
  if (out_of_triangle(a.binding.bary)) a.binding.bary = retract(a.binding.bary);
  if (out_of_triangle(b.binding.bary)) b.binding.bary = retract(b.binding.bary);
  a.log_scale[k - 1] = b.log_scale[k - 1] = std::log(s[k] * ratio);
  a.opacity_logit = b.opacity_logit = logit(split_opacity(sigmoid(g.opacity_logit), ratio));
  return {a, b};
}

DensifyStats densify_and_prune(Scene& scene, OptimizerState& state, const TrainConfig& cfg, double extent) {
  DensifyStats st;
  const std::size_t n = scene.size();
  const bool adhered = scene.stage == Stage::Adhered;
  const auto& opacity = adhered ? scene.adhered.opacity_logit : scene.detached.opacity_logit;
  if (state.grad_accum.size() != n) {
    state.grad_accum.assign(n, 0.0);
    state.grad_count.assign(n, 0.0);
  }

  // source index per output Gaussian; -1 marks a fresh child needing zeroed moments
  std::vector<long> source;
  AdheredSet na;
  DetachedSet nd;
  std::size_t budget_left = cfg.max_gaussians > n ? cfg.max_gaussians - n : 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sigmoid(opacity[i]) < cfg.prune_opacity) {
      ++st.pruned;
      ++budget_left;
      continue;
    }
    const double avg = state.grad_count[i] > 0 ? state.grad_accum[i] / state.grad_count[i] : 0.0;
    const bool hot = avg >= cfg.densify_grad && budget_left > 0;
    if (adhered) {
      const AdheredGaussian g = scene.adhered.get(i);
      const double smax = adhered_scales(g.log_scale).maxCoeff();
      if (hot && smax > cfg.percent_dense * extent) {
        auto [a, b] = split_gaussian(g, scene.mesh);
        na.push_back(a);
        na.push_back(b);
        source.push_back(-1);
        source.push_back(-1);
        ++st.split;
        --budget_left;
        continue;
      }
      na.push_back(g);
      source.push_back(static_cast<long>(i));
      if (hot) {
        na.push_back(g);
        source.push_back(-1);
        ++st.cloned;
        --budget_left;
      }
    } else {
      const DetachedGaussian g = scene.detached.get(i);
      const double smax = detached_scales(g.log_scale).maxCoeff();
      if (hot && smax > cfg.percent_dense * extent) {
        auto [a, b] = split_gaussian(g);
        nd.push_back(a);
        nd.push_back(b);
        source.push_back(-1);
        source.push_back(-1);
        ++st.split;
        --budget_left;
        continue;
      }
      nd.push_back(g);
      source.push_back(static_cast<long>(i));
      if (hot) {
        nd.push_back(g);
        source.push_back(-1);
        ++st.cloned;
        --budget_left;
      }
    }
  }
  if (adhered) scene.adhered = std::move(na);
  else scene.detached = std::move(nd);

  for (const auto& [name, width] : gaussian_slots()) {
    auto it = state.slots.find(name);
    if (it == state.slots.end() || it->second.m.size() != n * width) continue;
    AdamSlot& s = it->second;
    std::vector<double> m(source.size() * width, 0.0), v(source.size() * width, 0.0);
    for (std::size_t j = 0; j < source.size(); ++j) {
      if (source[j] < 0) continue;
      for (int k = 0; k < width; ++k) {
        m[j * width + k] = s.m[source[j] * width + k];
        v[j * width + k] = s.v[source[j] * width + k];
      }
    }
    s.m = std::move(m);
    s.v = std::move(v);
  }
  state.grad_accum.assign(source.size(), 0.0);
  state.grad_count.assign(source.size(), 0.0);
  return st;
}

// ---------------------------------------------------------------------------
// Step

LossRecord train_step(Scene& scene, const Frame& frame, const TrainConfig& cfg, OptimizerState& state, int iteration) {
  const std::size_t n = scene.size();
  SceneGradients grads = SceneGradients::zeros_like(scene);
  FrameTarget target{&frame.rgb, &frame.mask, frame.camera, frame.pose};
  RasterOptions opts;
  opts.background = cfg.background;
  const LossRecord rec = total_loss(scene, target, cfg.weights, opts, grads);
  if (!std::isfinite(rec.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << iteration << " (l1 " << rec.l1 << ", mask " << rec.mask << ", ssim "
        << rec.ssim << ", pa " << rec.pa << ", na " << rec.na << ", lap " << rec.lap << ", normal " << rec.normal
        << ", gaussians " << n << ")";
    throw Error(msg.str());
  }

  if (cfg.lr_vertices > 0.0 || state.slots.count("vertices")) {
    std::vector<Vec3> verts = scene.mesh.vertices();
    adam_update(state.slots["vertices"], flat(verts), flat(grads.vertices), 3 * verts.size(), cfg.lr_vertices);
    scene.mesh.set_vertices(std::move(verts));
  }

  if (scene.stage == Stage::Adhered) {
    AdheredSet& s = scene.adhered;
    std::vector<Vec3> bary(n);
    for (std::size_t i = 0; i < n; ++i) bary[i] = s.binding[i].bary.vec();
    adam_update(state.slots["a.bary"], flat(bary), flat(grads.bary), 3 * n, cfg.lr_bary);
    for (std::size_t i = 0; i < n; ++i) s.binding[i].bary = Barycentric::from(bary[i]);
    adam_update(state.slots["a.log_scale"], flat(s.log_scale), flat(grads.log_scale2), 2 * n, cfg.lr_scale);
    adam_update(state.slots["a.beta"], s.beta.data(), grads.beta.data(), n, cfg.lr_beta);
    adam_update(state.slots["opacity"], s.opacity_logit.data(), grads.opacity_logit.data(), n, cfg.lr_opacity);
    adam_update(state.slots["color"], flat(s.color_logit), flat(grads.color_logit), 3 * n, cfg.lr_color);
  } else {
    DetachedSet& s = scene.detached;
    adam_update(state.slots["d.center"], flat(s.center), flat(grads.center), 3 * n, center_lr(cfg, iteration));
    adam_update(state.slots["d.log_scale"], flat(s.log_scale), flat(grads.log_scale3), 3 * n, cfg.lr_scale);
    adam_update(state.slots["d.rotation"], flat(s.rotation), flat(grads.rotation), 4 * n, cfg.lr_rotation);
    adam_update(state.slots["opacity"], s.opacity_logit.data(), grads.opacity_logit.data(), n, cfg.lr_opacity);
    adam_update(state.slots["color"], flat(s.color_logit), flat(grads.color_logit), 3 * n, cfg.lr_color);
    for (Vec3& ls : s.log_scale)
      for (int k = 0; k < 3; ++k) ls[k] = std::clamp(ls[k], std::log(kMinDetachedScale), std::log(kMaxScale));
  }
  maintain_bindings(scene);

  if (state.grad_accum.size() != n) {
    state.grad_accum.assign(n, 0.0);
    state.grad_count.assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (grads.mean2d_norm[i] > 0.0) {
      state.grad_accum[i] += grads.mean2d_norm[i];
      state.grad_count[i] += 1.0;
    }
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

double scene_extent(const TriangleMesh& mesh) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Vec3& v : mesh.rest_vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return mesh.rest_vertices().empty() ? 1.0 : (hi - lo).norm();
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<Frame> frames, Scene scene)
    : cfg_(std::move(cfg)), frames_(std::move(frames)), scene_(std::move(scene)) {
  check_inputs();
  maintain_bindings(scene_);
}

// A checkpoint was written after maintenance, so the scene is restored untouched.
Trainer::Trainer(TrainConfig cfg, std::vector<Frame> frames, const Checkpoint& ckpt)
    : cfg_(std::move(cfg)), frames_(std::move(frames)), scene_(ckpt.scene) {
  check_inputs();
  iteration_ = static_cast<int>(ckpt.iteration);
  for (const auto& [key, data] : ckpt.extra) {
    if (key == "stats.grad_accum") state_.grad_accum = data;
    else if (key == "stats.grad_count") state_.grad_count = data;
    else if (key.rfind("adam.", 0) == 0) {
      const auto dot = key.rfind('.');
      const std::string slot = key.substr(5, dot - 5), field = key.substr(dot + 1);
      AdamSlot& s = state_.slots[slot];
      if (field == "m") s.m = data;
      else if (field == "v") s.v = data;
      else if (field == "t" && !data.empty()) s.t = static_cast<std::uint64_t>(data[0]);
    }
  }
}

void Trainer::check_inputs() {
  cfg_.validate();
  if (frames_.empty()) throw Error("training needs at least one frame");
  for (const Frame& f : frames_)
    if (f.pose.bone_count() != scene_.mesh.bone_count())
      throw Error("frame pose bone count does not match the mesh skin weights");
  extent_ = scene_extent(scene_.mesh);
}

LossRecord Trainer::step() {
  if (done()) throw Error("training already finished");
  if (scene_.stage == Stage::Adhered && iteration_ >= cfg_.adhered_iters) {
    scene_.detached = detach(scene_.adhered, scene_.mesh);
    scene_.adhered = AdheredSet{};
    scene_.stage = Stage::Detached;
    for (const char* k : {"a.bary", "a.log_scale", "a.beta"}) state_.slots.erase(k);
    maintain_bindings(scene_);
  }
  const Frame& frame = frames_[static_cast<std::size_t>(iteration_) % frames_.size()];
  const LossRecord rec = train_step(scene_, frame, cfg_, state_, iteration_);
  ++iteration_;

  if (cfg_.check_invariants && scene_.stage == Stage::Adhered) {
    const InvariantReport r = check_adhered_invariants(scene_);
    worst_.max_plane_residual = std::max(worst_.max_plane_residual, r.max_plane_residual);
    worst_.min_normal_dot = std::min(worst_.min_normal_dot, r.min_normal_dot);
    worst_.max_signed_height = std::max(worst_.max_signed_height, r.max_signed_height);
    if (!r.ok()) ++violations_;
  }

  const bool in_window = iteration_ < cfg_.densify_until * cfg_.total_iters && iteration_ < cfg_.total_iters - cfg_.densify_tail;
  if (cfg_.densify_interval > 0 && iteration_ % cfg_.densify_interval == 0 && in_window) {
    densify_log_.emplace_back(iteration_, densify_and_prune(scene_, state_, cfg_, extent_));
    maintain_bindings(scene_);
  }
  return rec;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.scene = scene_;
  c.iteration = static_cast<std::uint64_t>(iteration_);
  for (const auto& [name, s] : state_.slots) {
    c.extra["adam." + name + ".m"] = s.m;
    c.extra["adam." + name + ".v"] = s.v;
    c.extra["adam." + name + ".t"] = {static_cast<double>(s.t)};
  }
  c.extra["stats.grad_accum"] = state_.grad_accum;
  c.extra["stats.grad_count"] = state_.grad_count;
  return c;
}

RunSummary run(const TrainConfig& cfg, const std::vector<Frame>& frames, const TriangleMesh& mesh,
               const std::string& resume_path, const std::function<void(int, const LossRecord&)>& progress) {
  cfg.validate();
  set_thread_count(cfg.threads);
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream c(fs::path(cfg.out_dir) / "config.txt");
    c << cfg.dump();
  }

  std::unique_ptr<Trainer> trainer;
  if (!resume_path.empty()) {
    trainer = std::make_unique<Trainer>(cfg, frames, load_checkpoint(resume_path));
  } else {
    Scene scene;
    scene.mesh = mesh;
    scene.stage = Stage::Adhered;
    scene.adhered = init_scene(mesh, cfg.init_gaussians ? cfg.init_gaussians : mesh.face_count(), cfg.seed);
    trainer = std::make_unique<Trainer>(cfg, frames, std::move(scene));
  }

  const fs::path csv_path = fs::path(cfg.out_dir) / "loss.csv";
  const bool append = !resume_path.empty() && fs::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw Error("cannot write " + csv_path.string());
  csv.precision(10);
  if (!append) csv << "iteration,stage,gaussians,l1,mask,ssim,pa,na,lap,normal,total\n";

  RunSummary sum;
  while (!trainer->done()) {
    const LossRecord rec = trainer->step();
    const int it = trainer->iteration();
    sum.last = rec;
    if (!std::isfinite(rec.total)) sum.finite = false;
    if (cfg.log_interval > 0 && (it % cfg.log_interval == 0 || trainer->done())) {
      csv << it << ',' << (trainer->scene().stage == Stage::Adhered ? "adhered" : "detached") << ','
          << trainer->scene().size() << ',' << rec.l1 << ',' << rec.mask << ',' << rec.ssim << ',' << rec.pa << ','
          << rec.na << ',' << rec.lap << ',' << rec.normal << ',' << rec.total << '\n';
      if (progress) progress(it, rec);
    }
    if (cfg.snapshot_interval > 0 && it % cfg.snapshot_interval == 0 && !trainer->done()) {
      std::ostringstream name;
      name << "ckpt_" << std::setw(6) << std::setfill('0') << it << ".ckpt";
      save_checkpoint((fs::path(cfg.out_dir) / name.str()).string(), trainer->checkpoint());
    }
  }
  save_checkpoint((fs::path(cfg.out_dir) / "final.ckpt").string(), trainer->checkpoint());
  sum.iterations = trainer->iteration();
  sum.gaussians = trainer->scene().size();
  sum.worst_invariants = trainer->worst_invariants();
  sum.invariant_violations = trainer->invariant_violations();
  return sum;
}

}  // namespace meshsplat
