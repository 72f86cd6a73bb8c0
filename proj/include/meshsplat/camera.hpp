#pragma once

#include "meshsplat/types.hpp"

namespace meshsplat {

/// Pinhole camera. Camera space is x right, y down, z forward; pixel (u, v) is
/// sampled at integer coordinates.
struct Camera {
  double fx = 100.0, fy = 100.0;
  double cx = 64.0, cy = 64.0;
  int width = 128, height = 128;
  Rigid world_to_camera;

  Vec3 center() const { return world_to_camera.inverse().translation; }
  /// Unit viewing direction in world space.
  Vec3 forward() const { return world_to_camera.rotation.row(2).transpose(); }
  void validate() const;
};

/// Camera at `eye` looking at `target`. `up` only needs to be non-parallel to the
/// viewing direction; a fallback is used otherwise.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy, int width, int height);

}  // namespace meshsplat
