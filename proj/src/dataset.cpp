#include "meshsplat/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "meshsplat/mesh_io.hpp"

namespace fs = std::filesystem;

namespace meshsplat {

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", index);
  return buf;
}

void save_cameras(const std::string& path, const std::vector<Frame>& frames) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "# camera_id width height fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n";
  for (const Frame& f : frames) {
    const Camera& c = f.camera;
    out << f.camera_id << ' ' << c.width << ' ' << c.height << ' ' << c.fx << ' ' << c.fy << ' ' << c.cx << ' '
        << c.cy;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out << ' ' << c.world_to_camera.rotation(i, j);
    for (int i = 0; i < 3; ++i) out << ' ' << c.world_to_camera.translation[i];
    out << '\n';
  }
}

std::vector<std::pair<int, Camera>> load_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<std::pair<int, Camera>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    int id = 0;
    Camera c;
    ss >> id >> c.width >> c.height >> c.fx >> c.fy >> c.cx >> c.cy;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) ss >> c.world_to_camera.rotation(i, j);
    for (int i = 0; i < 3; ++i) ss >> c.world_to_camera.translation[i];
    if (!ss) throw Error(path + ":" + std::to_string(lineno) + ": expected 19 numbers");
    c.validate();
    out.emplace_back(id, c);
  }
  return out;
}

TriangleMesh load_template_mesh(const std::string& root) {
  const fs::path r(root);
  const fs::path weights = r / "weights.txt";
  return load_mesh(r / "mesh.obj", fs::exists(weights) ? std::optional<fs::path>(weights) : std::nullopt);
}

std::vector<Frame> load_split(const std::string& root, const std::string& split, bool with_depth) {
  const fs::path dir = fs::path(root) / split;
  if (!fs::is_directory(dir)) throw Error("dataset split not found: " + dir.string());
  const auto cams = load_cameras((dir / "cameras.txt").string());
  const auto poses = load_pose_sequence((dir / "poses.txt").string());
  if (cams.size() != poses.size())
    throw Error("dataset split " + split + ": " + std::to_string(cams.size()) + " cameras but " +
                std::to_string(poses.size()) + " poses");
  if (cams.empty()) throw Error("dataset split " + split + " is empty");

  std::vector<Frame> frames(cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    Frame& f = frames[i];
    f.camera_id = cams[i].first;
    f.camera = cams[i].second;
    f.pose = poses[i];
    const fs::path base = dir / "frames" / frame_name(static_cast<int>(i));
    f.rgb = load_png(base.string() + ".rgb.png");
    f.mask = load_png(base.string() + ".mask.png");
    if (f.rgb.channels != 3 || f.mask.channels != 1) throw Error("frame " + base.string() + ": unexpected channel count");
    if (f.rgb.width != f.camera.width || f.rgb.height != f.camera.height || !(f.mask.width == f.rgb.width && f.mask.height == f.rgb.height))
      throw Error("frame " + base.string() + ": image size does not match its camera");
    if (with_depth) f.depth = load_png16(base.string() + ".depth-x1000.png", kDepthPngScale);
    if (i > 0 && (f.rgb.width != frames[0].rgb.width || f.rgb.height != frames[0].rgb.height))
      throw Error("dataset split " + split + ": frames differ in size");
    if (f.pose.bone_count() != frames[0].pose.bone_count())
      throw Error("dataset split " + split + ": frames differ in bone count");
  }
  return frames;
}

void save_split(const std::string& root, const std::string& split, const std::vector<Frame>& frames) {
  const fs::path dir = fs::path(root) / split;
  fs::create_directories(dir / "frames");
  save_cameras((dir / "cameras.txt").string(), frames);
  std::vector<Pose> poses;
  for (const Frame& f : frames) poses.push_back(f.pose);
  save_pose_sequence((dir / "poses.txt").string(), poses, frames.empty() ? 0 : frames[0].pose.bone_count());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const fs::path base = dir / "frames" / frame_name(static_cast<int>(i));
    save_png8(base.string() + ".rgb.png", frames[i].rgb);
    save_png8(base.string() + ".mask.png", frames[i].mask);
    if (!frames[i].depth.data.empty()) save_png16(base.string() + ".depth-x1000.png", frames[i].depth, kDepthPngScale);
  }
}

}  // namespace meshsplat
