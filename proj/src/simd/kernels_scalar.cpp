#include <algorithm>
#include <cmath>

#include "meshsplat/simd/kernels.hpp"

namespace meshsplat::simd {

namespace {

void composite_scalar(const SplatCoeffs& s, int list_pos, const CompositeLimits& lim, CompositeSpan& span) {
  const double dy = span.y - s.my;
  for (int i = 0; i < span.count; ++i) {
    if (span.last[i] >= 0) continue;
    const double dx = span.x0 + i - s.mx;
    const double m = dx * (s.ca * dx + s.cb * dy) + dy * (s.cb * dx + s.cc * dy);
    if (!(m <= lim.cutoff)) continue;
    const double alpha = std::min(lim.max_alpha, s.opacity * std::exp(-0.5 * m));
    const double w = alpha * span.T[i];
    span.r[i] += w * s.r;
    span.g[i] += w * s.g;
    span.b[i] += w * s.b;
    span.depth[i] += w * s.depth;
    if (span.T[i] >= 0.5 && span.T[i] * (1.0 - alpha) < 0.5) span.median[i] = s.depth;
    span.T[i] *= 1.0 - alpha;
    if (span.T[i] < lim.min_transmittance) span.last[i] = list_pos + 1;
  }
}

void composite_backward_scalar(const SplatCoeffs& s, int list_pos, const CompositeLimits& lim, BackwardSpan& span,
                               SplatCoeffGrad& grad) {
  const double dy = span.y - s.my;
  for (int i = 0; i < span.count; ++i) {
    if (list_pos >= span.last[i]) continue;
    const double dx = span.x0 + i - s.mx;
    const double m = dx * (s.ca * dx + s.cb * dy) + dy * (s.cb * dx + s.cc * dy);
    if (!(m <= lim.cutoff)) continue;
    const double gauss = std::exp(-0.5 * m);
    const double raw = s.opacity * gauss;
    const double alpha = std::min(lim.max_alpha, raw);
    const double keep = 1.0 - alpha;
    const double T_in = span.T[i] / keep;
    const double weight = span.grad_r[i] * s.r + span.grad_g[i] * s.g + span.grad_b[i] * s.b + span.grad_depth[i] * s.depth;
    const double d_alpha = T_in * weight - span.suffix[i] / keep;
    const double contrib = alpha * T_in;
    span.suffix[i] += weight * contrib;
    span.T[i] = T_in;

    grad.r += span.grad_r[i] * contrib;
    grad.g += span.grad_g[i] * contrib;
    grad.b += span.grad_b[i] * contrib;
    grad.depth += span.grad_depth[i] * contrib;
    if (raw < lim.max_alpha) {
      grad.opacity += d_alpha * gauss;
      const double d_power = d_alpha * raw;
      grad.mx += d_power * (s.ca * dx + s.cb * dy);
      grad.my += d_power * (s.cb * dx + s.cc * dy);
      grad.ca += -0.5 * d_power * dx * dx;
      grad.cb += -d_power * dx * dy;
      grad.cc += -0.5 * d_power * dy * dy;
    }
  }
}

void project_batch_scalar(const double* xyz, const int* faces, const ProjectionFrame* frames, std::size_t n,
                          double* bary, std::uint8_t* outside) {
  for (std::size_t i = 0; i < n; ++i) {
    const ProjectionFrame& fr = frames[faces[i]];
    const double dx = xyz[3 * i] - fr.origin[0];
    const double dy = xyz[3 * i + 1] - fr.origin[1];
    const double dz = xyz[3 * i + 2] - fr.origin[2];
    const double s = dx * fr.du[0] + dy * fr.du[1] + dz * fr.du[2];
    const double t = dx * fr.dv[0] + dy * fr.dv[1] + dz * fr.dv[2];
    const double a = 1.0 - s - t;
    bary[3 * i] = a;
    bary[3 * i + 1] = s;
    bary[3 * i + 2] = t;
    outside[i] = (a < 0.0 || s < 0.0 || t < 0.0) ? 1 : 0;
  }
}

void tsdf_row_scalar(const TsdfRow& row) {
  for (int i = 0; i < row.count; ++i) {
    const double x = row.base[0] + i * row.step[0];
    const double y = row.base[1] + i * row.step[1];
    const double z = row.base[2] + i * row.step[2];
    if (!(z > 1e-9)) continue;
    const double u = std::floor(row.fx * x / z + row.cx + 0.5);
    const double v = std::floor(row.fy * y / z + row.cy + 0.5);
    if (!(u >= 0.0 && u < row.width && v >= 0.0 && v < row.height)) continue;
    const double d = row.depth[static_cast<std::size_t>(v) * static_cast<std::size_t>(row.width) + static_cast<std::size_t>(u)];
    if (!(d > 0.0)) continue;
    const double sdf = d - z;
    if (sdf < -row.truncation) continue;
    const double val = std::min(1.0, sdf / row.truncation);
    const double w = row.weight[i];
    row.tsdf[i] = (row.tsdf[i] * w + val) / (w + 1.0);
    row.weight[i] = w + 1.0;
  }
}

}  // namespace

namespace detail {
const KernelTable& scalar_table() {
  static const KernelTable table{Isa::Scalar, composite_scalar, composite_backward_scalar, project_batch_scalar,
                                 tsdf_row_scalar};
  return table;
}
}  // namespace detail

}  // namespace meshsplat::simd
