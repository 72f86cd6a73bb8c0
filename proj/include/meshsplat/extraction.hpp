#pragma once

#include <vector>

#include "meshsplat/camera.hpp"
#include "meshsplat/gaussians.hpp"
#include "meshsplat/image.hpp"
#include "meshsplat/skinning.hpp"

namespace meshsplat {

/// Regular grid of truncated signed distances. Voxel (i, j, k) sits at
/// origin + voxel_size * (i, j, k); x varies fastest in storage.
struct TsdfVolume {
  int nx = 0, ny = 0, nz = 0;
  double voxel_size = 0.0;
  Vec3 origin = Vec3::Zero();
  double truncation = 0.0;
  std::vector<double> tsdf;    // in [-1, 1], initialized to 1
  std::vector<double> weight;  // number of views observed

  TsdfVolume() = default;
  TsdfVolume(int nx, int ny, int nz, double voxel_size, const Vec3& origin, double truncation);

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }
  Vec3 position(int i, int j, int k) const { return origin + voxel_size * Vec3(i, j, k); }
};

/// Cameras on a Fibonacci sphere looking at target. count = 1 gives the +z pole.
std::vector<Camera> sample_sphere_cameras(int count, double radius, const Vec3& target, double fx, int width,
                                          int height);

/// Fuses one depth map (1 channel, meters, <= 0 means no data) seen from cam.
void integrate(TsdfVolume& volume, const Image& depth, const Camera& cam);

/// Iso-level-0 surface over voxels observed at least once. Shared edge vertices are
/// welded and degenerate faces dropped. Returns an empty mesh when nothing crosses.
TriangleMesh marching_cubes(const TsdfVolume& volume);

/// Per-pixel depth fed to the fusion.
enum class DepthEstimator { Median, Expected };

struct ExtractOptions {
  int cameras = 100;
  double radius_factor = 2.5;  // sphere radius over the subject's bounding-box diagonal
  int resolution = 256;        // voxels along the longest box side
  double margin = 0.1;         // box enlargement, fraction of each side
  double truncation_voxels = 4.0;
  double alpha_threshold = 0.5;
  int image_size = 256;
  DepthEstimator depth = DepthEstimator::Expected;

  void validate() const;
};

/// Renders depth from sphere cameras around the posed scene and fuses it.
TsdfVolume fuse_scene(const Scene& scene, const Pose& pose, const ExtractOptions& opts = {});
TriangleMesh extract_mesh(const Scene& scene, const Pose& pose, const ExtractOptions& opts = {});

}  // namespace meshsplat
