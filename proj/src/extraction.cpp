#include "meshsplat/extraction.hpp"

#include <cmath>
#include <limits>

#include "meshsplat/parallel.hpp"
#include "meshsplat/render.hpp"
#include "meshsplat/simd/kernels.hpp"

namespace meshsplat {

TsdfVolume::TsdfVolume(int nx_, int ny_, int nz_, double voxel, const Vec3& origin_, double trunc)
    : nx(nx_), ny(ny_), nz(nz_), voxel_size(voxel), origin(origin_), truncation(trunc) {
  if (nx < 2 || ny < 2 || nz < 2) throw Error("TSDF volume needs at least 2 voxels per axis");
  if (!(voxel > 0.0) || !(trunc > 0.0)) throw Error("TSDF voxel size and truncation must be positive");
  const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
  tsdf.assign(n, 1.0);
  weight.assign(n, 0.0);
}

std::vector<Camera> sample_sphere_cameras(int count, double radius, const Vec3& target, double fx, int width,
                                          int height) {
  if (count < 1) throw Error("sample_sphere_cameras: count must be at least 1");
  if (!(radius > 0.0)) throw Error("sample_sphere_cameras: radius must be positive");
  const double golden = 3.141592653589793 * (3.0 - std::sqrt(5.0));
  std::vector<Camera> cams;
  cams.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Vec3 dir(0, 0, 1);
    if (count > 1) {
      const double z = 1.0 - (2.0 * i + 1.0) / count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * i;
      dir = Vec3(r * std::cos(phi), r * std::sin(phi), z);
    }
    cams.push_back(look_at(target + radius * dir, target, Vec3(0, 1, 0), fx, fx, width, height));
  }
  return cams;
}

void integrate(TsdfVolume& vol, const Image& depth, const Camera& cam) {
  if (depth.channels != 1 || depth.width != cam.width || depth.height != cam.height)
    throw Error("integrate: depth image does not match the camera");
  const auto& kernel = simd::kernels().tsdf_row;
  const Mat3& R = cam.world_to_camera.rotation;
  const Vec3 step = R.col(0) * vol.voxel_size;
  const std::size_t rows = static_cast<std::size_t>(vol.ny) * vol.nz;
  parallel_for(rows, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const int j = static_cast<int>(r % vol.ny), k = static_cast<int>(r / vol.ny);
      const Vec3 base = cam.world_to_camera.apply(vol.position(0, j, k));
      simd::TsdfRow row;
      for (int a = 0; a < 3; ++a) {
        row.base[a] = base[a];
        row.step[a] = step[a];
      }
      row.count = vol.nx;
      row.fx = cam.fx;
      row.fy = cam.fy;
      row.cx = cam.cx;
      row.cy = cam.cy;
      row.width = cam.width;
      row.height = cam.height;
      row.depth = depth.data.data();
      row.truncation = vol.truncation;
      row.tsdf = vol.tsdf.data() + vol.index(0, j, k);
      row.weight = vol.weight.data() + vol.index(0, j, k);
      kernel(row);
    }
  });
}

void ExtractOptions::validate() const {
  if (cameras < 1) throw Error("extract: cameras must be at least 1");
  if (!(radius_factor > 0.0)) throw Error("extract: radius_factor must be positive");
  if (resolution < 2) throw Error("extract: resolution must be at least 2");
  if (!(margin >= 0.0)) throw Error("extract: margin must be nonnegative");
  if (!(truncation_voxels > 0.0)) throw Error("extract: truncation must be positive");
  if (image_size < 1) throw Error("extract: image_size must be positive");
}

TsdfVolume fuse_scene(const Scene& scene, const Pose& pose, const ExtractOptions& opts) {
  opts.validate();
  if (scene.size() == 0) throw Error("extract: scene has no Gaussians");
  RenderCache cache;
  Camera probe;
  render(scene, pose, probe, {}, &cache);

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Vec3& m : cache.mean_o) {
    lo = lo.cwiseMin(m);
    hi = hi.cwiseMax(m);
  }
  const Vec3 pad = (hi - lo) * opts.margin + Vec3::Constant(1e-6);
  lo -= pad;
  hi += pad;
  const Vec3 size = hi - lo;
  const double voxel = size.maxCoeff() / (opts.resolution - 1);
  const Eigen::Vector3i dims = ((size / voxel).array().ceil().cast<int>() + 1).max(2);
  TsdfVolume vol(dims.x(), dims.y(), dims.z(), voxel, lo, opts.truncation_voxels * voxel);

  const Vec3 center = 0.5 * (lo + hi);
  const double diag = size.norm();
  const double radius = opts.radius_factor * diag;
  // fit the box diagonal into 90% of the image
  const double fx = 0.9 * opts.image_size * radius / diag;
  RasterOptions ro;
  for (const Camera& cam : sample_sphere_cameras(opts.cameras, radius, center, fx, opts.image_size, opts.image_size)) {
    const FrameBuffer fb = render(scene, pose, cam, ro);
    Image depth(fb.width, fb.height, 1);
    const std::vector<double>& z = opts.depth == DepthEstimator::Median ? fb.median_depth : fb.depth;
    for (std::size_t p = 0; p < fb.pixel_count(); ++p) depth.data[p] = fb.alpha[p] >= opts.alpha_threshold ? z[p] : 0.0;
    integrate(vol, depth, cam);
  }
  return vol;
}

TriangleMesh extract_mesh(const Scene& scene, const Pose& pose, const ExtractOptions& opts) {
  return marching_cubes(fuse_scene(scene, pose, opts));
}

}  // namespace meshsplat
