#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "meshsplat/dataset.hpp"

namespace meshsplat {

/// Unit-radius icosphere with `subdiv` midpoint subdivisions (20 * 4^subdiv faces).
TriangleMesh icosphere(int subdiv, double radius = 1.0);
/// Torus with nu x nv quads split into 2 * nu * nv triangles.
TriangleMesh torus(int nu, int nv, double major_radius, double minor_radius);

/// Bone hierarchy of a synthetic figure. Bone 0 is the root.
struct Skeleton {
  std::vector<int> parent;    // -1 for the root
  std::vector<Vec3> joint;    // pivot in canonical space
  std::vector<BoneSegment> segment;
  std::vector<Vec3> swing_axis;  // local rotation axis driven by the pose amplitude
  int bone_count() const { return static_cast<int>(parent.size()); }
};

/// A skinned figure: the template handed to training, the ground-truth surface
/// (same topology, template plus low-frequency bumps) and baked vertex colors.
struct Subject {
  Skeleton skeleton;
  TriangleMesh mesh;
  TriangleMesh gt_mesh;
  std::vector<Vec3> colors;  // per gt vertex
};

/// bones = 2 (two-segment body) or 5 (torso with head, two arms, two legs).
Subject build_figure(int bones, std::uint64_t seed, double bump_amplitude);

/// Composes per-bone local rotations about their joints down the hierarchy. `root`
/// is applied last, to the whole figure.
Pose forward_kinematics(const Skeleton& sk, const std::vector<Mat3>& local, const Rigid& root);

/// Pose of frame t in [0, 1): sinusoidal joint swings scaled by amplitude (radians)
/// and a root yaw of yaw_sweep * t (radians) about the vertical axis.
Pose figure_pose(const Skeleton& sk, double t, double amplitude, double yaw_sweep, std::uint64_t seed);

/// Vertices skinned by the mesh's own weights.
std::vector<Vec3> skin_vertices(const TriangleMesh& mesh, const Pose& pose);

/// Result of the reference mesh rasterizer.
struct MeshImage {
  Image rgb;    // coverage-weighted color over a black background
  Image mask;   // covered fraction of each pixel's samples
  Image depth;  // mean depth of covered samples, 0 where uncovered
  std::size_t covered_samples = 0;
};

/// Z-buffered flat-colored rasterization with supersample x supersample samples per
/// pixel (perspective-correct color interpolation).
MeshImage rasterize_mesh(const std::vector<Vec3>& vertices, const std::vector<Face>& faces,
                         const std::vector<Vec3>& colors, const Camera& cam, int supersample);

struct GenerateConfig {
  int bones = 5;
  int frames = 60;
  int test_views = 8;
  int width = 128, height = 128;
  double fx = 260.0;
  double camera_distance = 3.2;
  double camera_height = 0.3;
  double amplitude = 0.5;
  double yaw_sweep = 6.283185307179586;
  double bump_amplitude = 0.012;
  int supersample = 4;
  std::uint64_t seed = 0;

  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  void validate() const;
};

struct SyntheticDataset {
  Subject subject;
  std::vector<Frame> train;
  std::vector<Frame> test;
};

inline constexpr int kGeneratorVersion = 1;

/// Training frames from one fixed camera (id 0) and a ring of test_views held-out
/// cameras (ids 1..test_views) on evenly spaced training poses.
SyntheticDataset generate(const GenerateConfig& cfg);
/// Writes mesh.obj, weights.txt, gt_mesh.obj, meta.txt and the train/test splits.
void write_dataset(const std::string& root, const SyntheticDataset& ds, const GenerateConfig& cfg);

}  // namespace meshsplat
