#include "meshsplat/camera.hpp"

#include <cmath>

namespace meshsplat {

void Camera::validate() const {
  if (!(fx > 0 && fy > 0)) throw Error("camera: focal lengths must be positive");
  if (width < 1 || height < 1) throw Error("camera: image size must be at least 1x1");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy, int width, int height) {
  const Vec3 z = (target - eye).normalized();
  Vec3 down = -up.normalized();
  if (std::abs(z.dot(down)) > 1.0 - 1e-9) down = std::abs(z.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 x = down.cross(z).normalized();
  const Vec3 y = z.cross(x);

  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  cam.world_to_camera.rotation.row(0) = x.transpose();
  cam.world_to_camera.rotation.row(1) = y.transpose();
  cam.world_to_camera.rotation.row(2) = z.transpose();
  cam.world_to_camera.translation = -(cam.world_to_camera.rotation * eye);
  cam.validate();
  return cam;
}

}  // namespace meshsplat
