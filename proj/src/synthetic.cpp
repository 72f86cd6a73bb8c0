#include "meshsplat/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "meshsplat/mesh_io.hpp"
#include "meshsplat/parallel.hpp"
#include "meshsplat/random.hpp"

namespace fs = std::filesystem;

namespace meshsplat {

namespace {

constexpr double kPi = 3.141592653589793;

}  // namespace

TriangleMesh icosphere(int subdiv, double radius) {
  if (subdiv < 0 || subdiv > 7) throw Error("icosphere: subdivision level must be in [0, 7]");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                         {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (Vec3& p : v) p.normalize();
  for (int s = 0; s < subdiv; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const Face& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  for (Vec3& p : v) p *= radius;
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh torus(int nu, int nv, double R, double r) {
  if (nu < 3 || nv < 3) throw Error("torus: need at least 3 segments per direction");
  if (!(R > r && r > 0.0)) throw Error("torus: need major radius > minor radius > 0");
  std::vector<Vec3> v;
  std::vector<Face> f;
  for (int i = 0; i < nu; ++i) {
    const double u = 2.0 * kPi * i / nu;
    for (int j = 0; j < nv; ++j) {
      const double w = 2.0 * kPi * j / nv;
      v.emplace_back((R + r * std::cos(w)) * std::cos(u), (R + r * std::cos(w)) * std::sin(u), r * std::sin(w));
    }
  }
  auto id = [&](int i, int j) { return ((i + nu) % nu) * nv + (j + nv) % nv; };
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < nv; ++j) {
      f.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      f.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  return TriangleMesh(std::move(v), std::move(f));
}

namespace {

struct Part {
  Vec3 center;
  Vec3 radii;
  int subdiv;
  int bone;
  Vec3 color;
  double stripe;  // stripe frequency along y, cycles per meter
};

std::vector<Vec3> vertex_normals(const TriangleMesh& m) {
  std::vector<Vec3> n(m.vertex_count(), Vec3::Zero());
  for (std::size_t fi = 0; fi < m.face_count(); ++fi) {
    const Face& f = m.face(static_cast<int>(fi));
    const auto c = m.corners(static_cast<int>(fi));
    const Vec3 w = (c[1] - c[0]).cross(c[2] - c[0]);
    for (int k = 0; k < 3; ++k) n[static_cast<std::size_t>(f[k])] += w;
  }
  for (Vec3& x : n) x.normalize();
  return n;
}

}  // namespace

Subject build_figure(int bones, std::uint64_t seed, double bump) {
  Subject s;
  Skeleton& sk = s.skeleton;
  std::vector<Part> parts;
  if (bones == 5) {
    sk.parent = {-1, 0, 0, 0, 0};
    sk.joint = {{0, 0, 0}, {0.17, 0.18, 0}, {-0.17, 0.18, 0}, {0.09, -0.26, 0}, {-0.09, -0.26, 0}};
    sk.segment = {{{0, -0.25, 0}, {0, 0.45, 0}},
                  {{0.17, 0.18, 0}, {0.50, 0.15, 0}},
                  {{-0.17, 0.18, 0}, {-0.50, 0.15, 0}},
                  {{0.09, -0.26, 0}, {0.09, -0.76, 0}},
                  {{-0.09, -0.26, 0}, {-0.09, -0.76, 0}}};
    sk.swing_axis = {{0, 1, 0}, {0, 0, 1}, {0, 0, -1}, {1, 0, 0}, {-1, 0, 0}};
    parts = {{{0, 0, 0}, {0.18, 0.30, 0.11}, 4, 0, {0.80, 0.35, 0.30}, 6.0},
             {{0, 0.42, 0}, {0.11, 0.12, 0.11}, 3, 0, {0.90, 0.75, 0.60}, 0.0},
             {{0.33, 0.16, 0}, {0.17, 0.055, 0.055}, 3, 1, {0.30, 0.50, 0.80}, 0.0},
             {{-0.33, 0.16, 0}, {0.17, 0.055, 0.055}, 3, 2, {0.30, 0.50, 0.80}, 0.0},
             {{0.09, -0.52, 0}, {0.065, 0.24, 0.07}, 3, 3, {0.35, 0.70, 0.40}, 5.0},
             {{-0.09, -0.52, 0}, {0.065, 0.24, 0.07}, 3, 4, {0.35, 0.70, 0.40}, 5.0}};
  } else if (bones == 2) {
    sk.parent = {-1, 0};
    sk.joint = {{0, 0, 0}, {0, 0.05, 0}};
    sk.segment = {{{0, -0.45, 0}, {0, 0.05, 0}}, {{0, 0.05, 0}, {0, 0.55, 0}}};
    sk.swing_axis = {{0, 1, 0}, {0, 0, 1}};
    parts = {{{0, -0.2, 0}, {0.16, 0.27, 0.12}, 4, 0, {0.80, 0.35, 0.30}, 6.0},
             {{0, 0.30, 0}, {0.13, 0.27, 0.10}, 4, 1, {0.30, 0.50, 0.80}, 5.0}};
  } else {
    throw Error("build_figure: bones must be 2 or 5");
  }

  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::vector<int> part_of;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const TriangleMesh sphere = icosphere(parts[p].subdiv);
    const int base = static_cast<int>(verts.size());
    for (const Vec3& q : sphere.vertices()) {
      verts.push_back(parts[p].center + q.cwiseProduct(parts[p].radii));
      part_of.push_back(static_cast<int>(p));
    }
    for (const Face& f : sphere.faces()) faces.push_back({f[0] + base, f[1] + base, f[2] + base});
  }
  s.mesh = TriangleMesh(verts, faces);
  const std::vector<double> weights = inverse_distance_skin_weights(verts, sk.segment);
  s.mesh.set_skin_weights(weights, sk.bone_count());

  // low-frequency bumps along the template normals
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Vec3 phase(rng.uniform(0, 2 * kPi), rng.uniform(0, 2 * kPi), rng.uniform(0, 2 * kPi));
  const double k = 2.0 * kPi / 0.3;
  const std::vector<Vec3> normals = vertex_normals(s.mesh);
  std::vector<Vec3> gt(verts.size());
  for (std::size_t i = 0; i < verts.size(); ++i) {
    const Vec3& p = verts[i];
    const double h = bump * std::sin(k * p.x() + phase.x()) * std::sin(k * p.y() + phase.y()) *
                     std::cos(k * p.z() + phase.z());
    gt[i] = p + h * normals[i];
  }
  s.gt_mesh = TriangleMesh(gt, faces);
  s.gt_mesh.set_skin_weights(weights, sk.bone_count());

  // canonical colors with baked diffuse shading
  const Vec3 light = Vec3(0.3, 0.6, 0.75).normalized();
  const std::vector<Vec3> gt_normals = vertex_normals(s.gt_mesh);
  s.colors.resize(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Part& part = parts[static_cast<std::size_t>(part_of[i])];
    double tex = 1.0;
    if (part.stripe > 0.0) tex = 0.8 + 0.2 * std::sin(2.0 * kPi * part.stripe * gt[i].y());
    const double shade = 0.45 + 0.55 * std::max(0.0, gt_normals[i].dot(light));
    s.colors[i] = (part.color * tex * shade).cwiseMin(1.0);
  }
  return s;
}

Pose forward_kinematics(const Skeleton& sk, const std::vector<Mat3>& local, const Rigid& root) {
  const int nb = sk.bone_count();
  if (static_cast<int>(local.size()) != nb) throw Error("forward_kinematics: rotation count does not match bones");
  std::vector<Rigid> world(static_cast<std::size_t>(nb));
  for (int b = 0; b < nb; ++b) {
    const int p = sk.parent[static_cast<std::size_t>(b)];
    if (p >= b) throw Error("forward_kinematics: parents must precede children");
    Rigid about;
    about.rotation = local[static_cast<std::size_t>(b)];
    about.translation = sk.joint[static_cast<std::size_t>(b)] - about.rotation * sk.joint[static_cast<std::size_t>(b)];
    world[static_cast<std::size_t>(b)] = p < 0 ? about : world[static_cast<std::size_t>(p)] * about;
  }
  Pose pose;
  pose.bones.resize(world.size());
  for (std::size_t b = 0; b < world.size(); ++b) pose.bones[b] = root * world[b];
  return pose;
}

Pose figure_pose(const Skeleton& sk, double t, double amplitude, double yaw_sweep, std::uint64_t seed) {
  const int nb = sk.bone_count();
  Rng rng(seed + 17);
  std::vector<Mat3> local(static_cast<std::size_t>(nb), Mat3::Identity());
  for (int b = 1; b < nb; ++b) {
    const double phase = rng.uniform(0, 2 * kPi);
    const double freq = 1.0 + std::floor(rng.uniform(0, 3));
    const double angle = amplitude * std::sin(2.0 * kPi * freq * t + phase);
    local[static_cast<std::size_t>(b)] = axis_angle(sk.swing_axis[static_cast<std::size_t>(b)], angle);
  }
  Rigid root;
  root.rotation = axis_angle(Vec3(0, 1, 0), yaw_sweep * t);
  return forward_kinematics(sk, local, root);
}

std::vector<Vec3> skin_vertices(const TriangleMesh& mesh, const Pose& pose) {
  const int nb = mesh.bone_count();
  if (pose.bone_count() != nb) throw Error("skin_vertices: pose bone count does not match the mesh");
  std::vector<Vec3> out(mesh.vertex_count());
  for (std::size_t v = 0; v < out.size(); ++v) {
    const auto w = mesh.skin_weights(static_cast<int>(v));
    Vec3 p = Vec3::Zero();
    for (int b = 0; b < nb; ++b) p += w[static_cast<std::size_t>(b)] * pose.bones[static_cast<std::size_t>(b)].apply(mesh.vertices()[v]);
    out[v] = p;
  }
  return out;
}

MeshImage rasterize_mesh(const std::vector<Vec3>& vertices, const std::vector<Face>& faces,
                         const std::vector<Vec3>& colors, const Camera& cam, int ss) {
  if (ss < 1) throw Error("rasterize_mesh: supersample must be at least 1");
  if (colors.size() != vertices.size()) throw Error("rasterize_mesh: one color per vertex required");
  const int W = cam.width * ss, H = cam.height * ss;
  std::vector<double> zbuf(static_cast<std::size_t>(W) * H, std::numeric_limits<double>::infinity());
  std::vector<Vec3> cbuf(zbuf.size(), Vec3::Zero());

  std::vector<Vec3> pc(vertices.size());
  std::vector<Vec2> uv(vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    pc[i] = cam.world_to_camera.apply(vertices[i]);
    uv[i] = Vec2(cam.fx * pc[i].x() / pc[i].z() + cam.cx, cam.fy * pc[i].y() / pc[i].z() + cam.cy);
  }
  // sample (sx, sy) sits at pixel coordinate (sx + 0.5) / ss - 0.5
  auto to_sample = [&](double u) { return (u + 0.5) * ss - 0.5; };
  for (const Face& f : faces) {
    const std::size_t a = static_cast<std::size_t>(f[0]), b = static_cast<std::size_t>(f[1]),
                      c = static_cast<std::size_t>(f[2]);
    if (pc[a].z() < kNearPlane || pc[b].z() < kNearPlane || pc[c].z() < kNearPlane) continue;
    const Vec2 p0(to_sample(uv[a].x()), to_sample(uv[a].y()));
    const Vec2 p1(to_sample(uv[b].x()), to_sample(uv[b].y()));
    const Vec2 p2(to_sample(uv[c].x()), to_sample(uv[c].y()));
    const double area = (p1 - p0).x() * (p2 - p0).y() - (p1 - p0).y() * (p2 - p0).x();
    if (std::abs(area) < 1e-14) continue;
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({p0.x(), p1.x(), p2.x()}))));
    const int x1 = std::min(W - 1, static_cast<int>(std::floor(std::max({p0.x(), p1.x(), p2.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({p0.y(), p1.y(), p2.y()}))));
    const int y1 = std::min(H - 1, static_cast<int>(std::floor(std::max({p0.y(), p1.y(), p2.y()}))));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 q(x, y);
        double l0 = ((p1 - q).x() * (p2 - q).y() - (p1 - q).y() * (p2 - q).x()) / area;
        double l1 = ((p2 - q).x() * (p0 - q).y() - (p2 - q).y() * (p0 - q).x()) / area;
        double l2 = 1.0 - l0 - l1;
        if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
        // perspective-correct weights
        const double w0 = l0 / pc[a].z(), w1 = l1 / pc[b].z(), w2 = l2 / pc[c].z();
        const double inv = w0 + w1 + w2;
        const double z = 1.0 / inv;
        const std::size_t idx = static_cast<std::size_t>(y) * W + x;
        if (z >= zbuf[idx]) continue;
        zbuf[idx] = z;
        cbuf[idx] = (w0 * colors[a] + w1 * colors[b] + w2 * colors[c]) * z;
      }
    }
  }

  MeshImage out;
  out.rgb = Image(cam.width, cam.height, 3);
  out.mask = Image(cam.width, cam.height, 1);
  out.depth = Image(cam.width, cam.height, 1);
  const double inv_n = 1.0 / (ss * ss);
  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      Vec3 col = Vec3::Zero();
      double zsum = 0.0;
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const std::size_t idx = static_cast<std::size_t>(py * ss + sy) * W + px * ss + sx;
          if (!std::isfinite(zbuf[idx])) continue;
          ++hits;
          col += cbuf[idx];
          zsum += zbuf[idx];
        }
      out.covered_samples += static_cast<std::size_t>(hits);
      for (int ch = 0; ch < 3; ++ch) out.rgb.at(px, py, ch) = col[ch] * inv_n;
      out.mask.at(px, py) = hits * inv_n;
      out.depth.at(px, py) = hits ? zsum / hits : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void GenerateConfig::set(const std::string& key, const std::string& value) {
  auto num = [&] {
    std::size_t pos = 0;
    double d = 0;
    try {
      d = std::stod(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != value.size() || !std::isfinite(d)) throw Error("generate key '" + key + "': bad number '" + value + "'");
    return d;
  };
  if (key == "bones") bones = static_cast<int>(num());
  else if (key == "frames") frames = static_cast<int>(num());
  else if (key == "test_views") test_views = static_cast<int>(num());
  else if (key == "width") width = static_cast<int>(num());
  else if (key == "height") height = static_cast<int>(num());
  else if (key == "fx") fx = num();
  else if (key == "camera_distance") camera_distance = num();
  else if (key == "camera_height") camera_height = num();
  else if (key == "amplitude") amplitude = num();
  else if (key == "yaw_sweep") yaw_sweep = num();
  else if (key == "bump_amplitude") bump_amplitude = num();
  else if (key == "supersample") supersample = static_cast<int>(num());
  else if (key == "seed") seed = static_cast<std::uint64_t>(num());
  else throw Error("unknown generate key '" + key + "'");
}

void GenerateConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) throw Error(path + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void GenerateConfig::validate() const {
  if (bones != 2 && bones != 5) throw Error("generate: bones must be 2 or 5");
  if (frames < 1) throw Error("generate: frames must be at least 1");
  if (test_views < 0) throw Error("generate: test_views must be nonnegative");
  if (width < 1 || height < 1) throw Error("generate: image size must be positive");
  if (!(fx > 0.0) || !(camera_distance > 0.0)) throw Error("generate: fx and camera_distance must be positive");
  if (supersample < 1) throw Error("generate: supersample must be at least 1");
  if (bump_amplitude < 0.0) throw Error("generate: bump_amplitude must be nonnegative");
}

namespace {

Frame render_frame(const Subject& s, const Pose& pose, const Camera& cam, int camera_id, int ss) {
  const MeshImage img = rasterize_mesh(skin_vertices(s.gt_mesh, pose), s.gt_mesh.faces(), s.colors, cam, ss);
  Frame f;
  f.rgb = img.rgb;
  f.mask = img.mask;
  f.depth = img.depth;
  f.camera = cam;
  f.camera_id = camera_id;
  f.pose = pose;
  return f;
}

}  // namespace

SyntheticDataset generate(const GenerateConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.subject = build_figure(cfg.bones, cfg.seed, cfg.bump_amplitude);
  const Skeleton& sk = ds.subject.skeleton;
  const Vec3 target(0, -0.1, 0);
  auto camera_at = [&](double azimuth) {
    const Vec3 eye(cfg.camera_distance * std::sin(azimuth), cfg.camera_height, cfg.camera_distance * std::cos(azimuth));
    return look_at(eye, target, Vec3(0, 1, 0), cfg.fx, cfg.fx, cfg.width, cfg.height);
  };

  std::vector<Pose> poses(static_cast<std::size_t>(cfg.frames));
  for (int i = 0; i < cfg.frames; ++i)
    poses[static_cast<std::size_t>(i)] =
        figure_pose(sk, static_cast<double>(i) / cfg.frames, cfg.amplitude, cfg.yaw_sweep, cfg.seed);

  ds.train.resize(poses.size());
  const Camera train_cam = camera_at(0.0);
  parallel_for(poses.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) ds.train[i] = render_frame(ds.subject, poses[i], train_cam, 0, cfg.supersample);
  });
  ds.test.resize(static_cast<std::size_t>(cfg.test_views));
  parallel_for(ds.test.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t k = i0; k < i1; ++k) {
      const double az = 2.0 * kPi * (k + 0.5) / cfg.test_views;
      const std::size_t frame = k * poses.size() / ds.test.size();
      ds.test[k] = render_frame(ds.subject, poses[frame], camera_at(az), static_cast<int>(k) + 1, cfg.supersample);
    }
  });
  return ds;
}

void write_dataset(const std::string& root, const SyntheticDataset& ds, const GenerateConfig& cfg) {
  const fs::path r(root);
  fs::create_directories(r);
  save_obj(ds.subject.mesh, r / "mesh.obj");
  save_skin_weights(ds.subject.mesh, r / "weights.txt");
  save_obj(ds.subject.gt_mesh, r / "gt_mesh.obj");
  save_split(root, "train", ds.train);
  save_split(root, "test", ds.test);
  std::ofstream meta(r / "meta.txt");
  meta.precision(17);
  meta << "generator_version = " << kGeneratorVersion << "\nseed = " << cfg.seed << "\nbones = " << cfg.bones
       << "\nframes = " << cfg.frames << "\ntest_views = " << cfg.test_views << "\nwidth = " << cfg.width
       << "\nheight = " << cfg.height << "\nfx = " << cfg.fx << "\ncamera_distance = " << cfg.camera_distance
       << "\ncamera_height = " << cfg.camera_height << "\namplitude = " << cfg.amplitude
       << "\nyaw_sweep = " << cfg.yaw_sweep << "\nbump_amplitude = " << cfg.bump_amplitude
       << "\nsupersample = " << cfg.supersample << "\n";
}

}  // namespace meshsplat
