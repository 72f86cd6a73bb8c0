#pragma once

#include <cstddef>
#include <cstdint>

#include "meshsplat/mesh.hpp"

namespace meshsplat::simd {

/// Instruction sets with a kernel implementation.
enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa);
/// Compiled in and supported by the running CPU.
bool isa_available(Isa isa);
/// Best available ISA unless overridden by force_isa() or MESHSPLAT_SIMD=scalar|avx2.
Isa active_isa();
/// Throws Error if the ISA is unavailable.
void force_isa(Isa isa);

// ---------------------------------------------------------------------------
// Splat compositing

/// One depth-sorted 2D Gaussian as seen by the compositing kernels. The conic is the
/// inverse 2D covariance [[ca, cb], [cb, cc]].
struct SplatCoeffs {
  double mx = 0.0, my = 0.0;
  double ca = 0.0, cb = 0.0, cc = 0.0;
  double opacity = 0.0;
  double r = 0.0, g = 0.0, b = 0.0;
  double depth = 0.0;
};

/// Numerical limits of the compositing model.
struct CompositeLimits {
  double max_alpha = 0.99;
  double min_transmittance = 1e-4;
  /// Squared Mahalanobis radius beyond which a splat contributes nothing.
  double cutoff = 9.0;
};

/// Running per-pixel state for `count` consecutive pixels of one row, sampled at
/// (x0 + i, y). A pixel is finished once last[i] >= 0; last[i] then holds the number
/// of tile-list entries it consumed.
struct CompositeSpan {
  double x0 = 0.0, y = 0.0;
  int count = 0;
  double* T = nullptr;
  double* r = nullptr;
  double* g = nullptr;
  double* b = nullptr;
  double* depth = nullptr;
  /// Depth of the splat that pulls T below 0.5; untouched until then.
  double* median = nullptr;
  int* last = nullptr;
};

/// Composites the splat at tile-list position `list_pos` behind the current state.
using CompositeFn = void (*)(const SplatCoeffs& s, int list_pos, const CompositeLimits& lim, CompositeSpan& span);

/// Back-to-front state for the backward pass. T holds the transmittance after the
/// splat being processed (it is divided back on the way out). suffix holds the
/// upstream-weighted contribution of everything behind, including the background.
/// grad_depth is dL/d(unnormalized depth sum).
struct BackwardSpan {
  double x0 = 0.0, y = 0.0;
  int count = 0;
  double* T = nullptr;
  double* suffix = nullptr;
  const int* last = nullptr;
  const double* grad_r = nullptr;
  const double* grad_g = nullptr;
  const double* grad_b = nullptr;
  const double* grad_depth = nullptr;
};

/// dL/d of each SplatCoeffs field (conic entries ca, cb, cc as independent values).
struct SplatCoeffGrad {
  double mx = 0.0, my = 0.0;
  double ca = 0.0, cb = 0.0, cc = 0.0;
  double opacity = 0.0;
  double r = 0.0, g = 0.0, b = 0.0;
  double depth = 0.0;
};

using CompositeBackwardFn = void (*)(const SplatCoeffs& s, int list_pos, const CompositeLimits& lim,
                                     BackwardSpan& span, SplatCoeffGrad& grad);

// ---------------------------------------------------------------------------
// Barycentric projection

/// For each i: bary[3i..3i+2] = projection of xyz[3i..3i+2] onto the plane of
/// faces[i]; outside[i] = 1 if any normalized coordinate is negative.
using ProjectBatchFn = void (*)(const double* xyz, const int* faces, const ProjectionFrame* frames,
                                std::size_t n, double* bary, std::uint8_t* outside);

// ---------------------------------------------------------------------------
// TSDF integration

/// One x-row of voxels. Voxel i sits at camera-space point base + i * step.
/// depth is width*height, row-major; entries <= 0 are invalid.
struct TsdfRow {
  double base[3] = {0, 0, 0};
  double step[3] = {0, 0, 0};
  int count = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  const double* depth = nullptr;
  double truncation = 0.0;
  double* tsdf = nullptr;
  double* weight = nullptr;
};

using TsdfRowFn = void (*)(const TsdfRow& row);

struct KernelTable {
  Isa isa;
  CompositeFn composite;
  CompositeBackwardFn composite_backward;
  ProjectBatchFn project_batch;
  TsdfRowFn tsdf_row;
};

const KernelTable& kernels();
const KernelTable& kernels(Isa isa);

namespace detail {
const KernelTable& scalar_table();
#if defined(MESHSPLAT_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
}  // namespace detail

}  // namespace meshsplat::simd
