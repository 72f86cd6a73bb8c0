#include "meshsplat/skinning.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace meshsplat {

Pose Pose::identity(int bones) {
  Pose p;
  p.bones.assign(static_cast<std::size_t>(bones), Rigid{});
  return p;
}

void gaussian_blend_weights(const BindingRecord& binding, const TriangleMesh& mesh, std::span<double> out) {
  const int nb = mesh.bone_count();
  const Barycentric a = out_of_triangle(binding.bary) ? retract(binding.bary) : binding.bary;
  const double sum = a.sum();
  const Face& f = mesh.face(binding.face);
  for (int b = 0; b < nb; ++b) out[static_cast<std::size_t>(b)] = 0.0;
  for (int k = 0; k < 3; ++k) {
    const auto w = mesh.skin_weights(f[static_cast<std::size_t>(k)]);
    const double ak = a[k] / sum;
    for (int b = 0; b < nb; ++b) out[static_cast<std::size_t>(b)] += ak * w[static_cast<std::size_t>(b)];
  }
}

std::vector<double> gaussian_blend_weights(const BindingRecord& binding, const TriangleMesh& mesh) {
  std::vector<double> out(static_cast<std::size_t>(mesh.bone_count()));
  gaussian_blend_weights(binding, mesh, out);
  return out;
}

BlendedTransform blend(std::span<const double> weights, const Pose& pose) {
  if (weights.size() != pose.bones.size()) throw Error("blend: weight count does not match bone count");
  BlendedTransform t;
  t.A.setZero();
  for (std::size_t b = 0; b < weights.size(); ++b) {
    const double w = weights[b];
    if (w == 0.0) continue;
    t.A += w * pose.bones[b].rotation;
    t.b += w * pose.bones[b].translation;
  }
  return t;
}

WarpedGaussian warp_gaussian(const Vec3& mean, const Mat3& cov, const BlendedTransform& t) {
  WarpedGaussian out;
  out.mean = t.A * mean + t.b;
  out.cov = t.A * cov * t.A.transpose();
  out.cov(1, 0) = out.cov(0, 1);
  out.cov(2, 0) = out.cov(0, 2);
  out.cov(2, 1) = out.cov(1, 2);
  return out;
}

WarpGrad warp_gaussian_backward(const Vec3& mean, const Mat3& cov, const BlendedTransform& t, const Vec3& grad_mean,
                                const Mat3& grad_cov) {
  const Mat3 g = 0.5 * (grad_cov + grad_cov.transpose());
  WarpGrad out;
  out.mean = t.A.transpose() * grad_mean;
  out.b = grad_mean;
  out.cov = t.A.transpose() * g * t.A;
  out.A = grad_mean * mean.transpose() + 2.0 * g * t.A * cov;
  return out;
}

void PoseGrad::resize(int bones) {
  rotation.assign(static_cast<std::size_t>(bones), Mat3::Zero());
  translation.assign(static_cast<std::size_t>(bones), Vec3::Zero());
}

void blend_backward(std::span<const double> weights, const Pose& pose, const Mat3& grad_A, const Vec3& grad_b,
                    PoseGrad* pose_grad, std::span<double> grad_weights) {
  for (std::size_t b = 0; b < weights.size(); ++b) {
    if (pose_grad) {
      pose_grad->rotation[b] += weights[b] * grad_A;
      pose_grad->translation[b] += weights[b] * grad_b;
    }
    if (!grad_weights.empty()) {
      grad_weights[b] = (grad_A.array() * pose.bones[b].rotation.array()).sum() + grad_b.dot(pose.bones[b].translation);
    }
  }
}

std::vector<Pose> load_pose_sequence(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pose file: " + path);
  int bones = 0;
  if (!(in >> bones) || bones <= 0) throw Error("pose file " + path + ": missing or invalid bone count");
  std::vector<Pose> poses;
  while (true) {
    Pose p;
    p.bones.resize(static_cast<std::size_t>(bones));
    for (int b = 0; b < bones; ++b) {
      double v[12];
      for (int k = 0; k < 12; ++k) {
        if (!(in >> v[k])) {
          if (b == 0 && k == 0 && in.eof()) return poses;
          throw Error("pose file " + path + ": truncated frame " + std::to_string(poses.size()));
        }
      }
      Rigid& r = p.bones[static_cast<std::size_t>(b)];
      r.rotation << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
      r.translation << v[9], v[10], v[11];
      const Mat3 err = r.rotation.transpose() * r.rotation - Mat3::Identity();
      if (err.cwiseAbs().maxCoeff() > 1e-6 || r.rotation.determinant() < 0) {
        throw Error("pose file " + path + ": frame " + std::to_string(poses.size()) + " bone " + std::to_string(b) +
                    " is not a rotation");
      }
    }
    poses.push_back(std::move(p));
  }
}

void save_pose_sequence(const std::string& path, const std::vector<Pose>& poses, int bones) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write pose file: " + path);
  out.precision(17);
  out << bones << "\n";
  for (const Pose& p : poses) {
    if (p.bone_count() != bones) throw Error("save_pose_sequence: inconsistent bone count");
    for (const Rigid& r : p.bones) {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out << r.rotation(i, j) << ' ';
      out << r.translation.x() << ' ' << r.translation.y() << ' ' << r.translation.z() << "\n";
    }
    out << "\n";
  }
}

}  // namespace meshsplat
