#pragma once

#include <string>
#include <vector>

#include "meshsplat/camera.hpp"
#include "meshsplat/image.hpp"
#include "meshsplat/mesh.hpp"
#include "meshsplat/skinning.hpp"

namespace meshsplat {

/// One observation: image, coverage mask, camera and the realized pose.
struct Frame {
  Image rgb;
  Image mask;
  Image depth;  // optional, empty when absent
  Camera camera;
  int camera_id = 0;
  Pose pose;
};

/// On-disk layout under `root`:
///   mesh.obj, weights.txt        template mesh and its skin weights
///   gt_mesh.obj                  ground-truth surface (optional)
///   <split>/cameras.txt          per frame: camera_id width height fx fy cx cy
///                                followed by 12 numbers (row-major R, then t) of
///                                the world-to-camera transform
///   <split>/poses.txt            pose-sequence format
///   <split>/frames/NNNN.rgb.png, NNNN.mask.png, NNNN.depth-x1000.png
///                                (depth in millimeters)
inline constexpr double kDepthPngScale = 1000.0;

std::vector<Frame> load_split(const std::string& root, const std::string& split, bool with_depth = false);
void save_split(const std::string& root, const std::string& split, const std::vector<Frame>& frames);

/// mesh.obj with weights.txt if present.
TriangleMesh load_template_mesh(const std::string& root);

void save_cameras(const std::string& path, const std::vector<Frame>& frames);
/// Camera ids and cameras, one per line.
std::vector<std::pair<int, Camera>> load_cameras(const std::string& path);

std::string frame_name(int index);

}  // namespace meshsplat
