// AVX2 variants of the hot kernels. Compiled with -mavx2 -mfma -ffp-contract=off and
// only reached through the dispatch table after a runtime CPU check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "meshsplat/simd/kernels.hpp"

namespace meshsplat::simd {

namespace {

// Cephes-style exp: x = n ln2 + r, |r| <= ln2/2, Pade approximant for e^r.
inline __m256d exp_pd(__m256d x) {
  const __m256d hi = _mm256_set1_pd(709.0);
  const __m256d lo = _mm256_set1_pd(-708.0);
  x = _mm256_max_pd(_mm256_min_pd(x, hi), lo);

  const __m256d fx = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634073599)),
                                     _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(fx, _mm256_set1_pd(6.93145751953125E-1)));
  r = _mm256_sub_pd(r, _mm256_mul_pd(fx, _mm256_set1_pd(1.42860682030941723212E-6)));

  const __m256d rr = _mm256_mul_pd(r, r);
  __m256d px = _mm256_set1_pd(1.26177193074810590878E-4);
  px = _mm256_add_pd(_mm256_mul_pd(px, rr), _mm256_set1_pd(3.02994407707441961300E-2));
  px = _mm256_add_pd(_mm256_mul_pd(px, rr), _mm256_set1_pd(9.99999999999999999910E-1));
  px = _mm256_mul_pd(px, r);
  __m256d qx = _mm256_set1_pd(3.00198505138664455042E-6);
  qx = _mm256_add_pd(_mm256_mul_pd(qx, rr), _mm256_set1_pd(2.52448340349684104192E-3));
  qx = _mm256_add_pd(_mm256_mul_pd(qx, rr), _mm256_set1_pd(2.27265548208155028766E-1));
  qx = _mm256_add_pd(_mm256_mul_pd(qx, rr), _mm256_set1_pd(2.00000000000000000009E0));
  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_add_pd(_mm256_set1_pd(1.0), _mm256_add_pd(e, e));

  __m256i n = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(fx));
  n = _mm256_slli_epi64(_mm256_add_epi64(n, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(e, _mm256_castsi256_pd(n));
}

// Lanes [0, remaining) enabled, as a 64-bit lane mask and a 32-bit lane mask.
inline __m256i lane_mask64(int remaining) {
  const __m256i idx = _mm256_set_epi64x(3, 2, 1, 0);
  return _mm256_cmpgt_epi64(_mm256_set1_epi64x(remaining), idx);
}

inline __m128i lane_mask32(int remaining) {
  const __m128i idx = _mm_set_epi32(3, 2, 1, 0);
  return _mm_cmpgt_epi32(_mm_set1_epi32(remaining), idx);
}

inline double hsum(__m256d v) {
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, v);
  return ((lanes[0] + lanes[1]) + lanes[2]) + lanes[3];
}

void composite_avx2(const SplatCoeffs& s, int list_pos, const CompositeLimits& lim, CompositeSpan& span) {
  const __m256d mx = _mm256_set1_pd(s.mx);
  const __m256d dy = _mm256_set1_pd(span.y - s.my);
  const __m256d ca = _mm256_set1_pd(s.ca), cb = _mm256_set1_pd(s.cb), cc = _mm256_set1_pd(s.cc);
  const __m256d op = _mm256_set1_pd(s.opacity);
  const __m256d amax = _mm256_set1_pd(lim.max_alpha);
  const __m256d cutoff = _mm256_set1_pd(lim.cutoff);
  const __m256d tmin = _mm256_set1_pd(lim.min_transmittance);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d neg_half = _mm256_set1_pd(-0.5);
  const __m256d sr = _mm256_set1_pd(s.r), sg = _mm256_set1_pd(s.g), sb = _mm256_set1_pd(s.b);
  const __m256d sz = _mm256_set1_pd(s.depth);
  const __m256d offsets = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);

  for (int i = 0; i < span.count; i += 4) {
    const int remaining = span.count - i;
    const __m256i lanes = lane_mask64(remaining);
    const __m128i lanes32 = lane_mask32(remaining);
    const __m128i last = _mm_maskload_epi32(span.last + i, lanes32);
    const __m256i active64 = _mm256_cvtepi32_epi64(_mm_cmplt_epi32(last, _mm_setzero_si128()));
    const __m256d active = _mm256_castsi256_pd(_mm256_and_si256(active64, lanes));
    if (_mm256_movemask_pd(active) == 0) continue;

    const __m256d x = _mm256_add_pd(_mm256_set1_pd(span.x0 + i), offsets);
    const __m256d dx = _mm256_sub_pd(x, mx);
    const __m256d m = _mm256_add_pd(
        _mm256_mul_pd(dx, _mm256_add_pd(_mm256_mul_pd(ca, dx), _mm256_mul_pd(cb, dy))),
        _mm256_mul_pd(dy, _mm256_add_pd(_mm256_mul_pd(cb, dx), _mm256_mul_pd(cc, dy))));
    const __m256d inside = _mm256_and_pd(active, _mm256_cmp_pd(m, cutoff, _CMP_LE_OQ));
    if (_mm256_movemask_pd(inside) == 0) continue;

    __m256d alpha = _mm256_min_pd(amax, _mm256_mul_pd(op, exp_pd(_mm256_mul_pd(neg_half, m))));
    alpha = _mm256_and_pd(alpha, inside);

    const __m256i store = _mm256_castpd_si256(inside);
    __m256d T = _mm256_maskload_pd(span.T + i, lanes);
    const __m256d w = _mm256_mul_pd(alpha, T);
    _mm256_maskstore_pd(span.r + i, store, _mm256_add_pd(_mm256_maskload_pd(span.r + i, lanes), _mm256_mul_pd(w, sr)));
    _mm256_maskstore_pd(span.g + i, store, _mm256_add_pd(_mm256_maskload_pd(span.g + i, lanes), _mm256_mul_pd(w, sg)));
    _mm256_maskstore_pd(span.b + i, store, _mm256_add_pd(_mm256_maskload_pd(span.b + i, lanes), _mm256_mul_pd(w, sb)));
    _mm256_maskstore_pd(span.depth + i, store,
                        _mm256_add_pd(_mm256_maskload_pd(span.depth + i, lanes), _mm256_mul_pd(w, sz)));
    const __m256d T_new = _mm256_mul_pd(T, _mm256_sub_pd(one, alpha));
    const __m256d crossed = _mm256_and_pd(inside, _mm256_and_pd(_mm256_cmp_pd(T, half, _CMP_GE_OQ),
                                                                _mm256_cmp_pd(T_new, half, _CMP_LT_OQ)));
    _mm256_maskstore_pd(span.median + i, _mm256_castpd_si256(crossed), sz);
    T = T_new;
    _mm256_maskstore_pd(span.T + i, store, T);

    int done = _mm256_movemask_pd(_mm256_and_pd(inside, _mm256_cmp_pd(T, tmin, _CMP_LT_OQ)));
    while (done) {
      const int lane = __builtin_ctz(static_cast<unsigned>(done));
      span.last[i + lane] = list_pos + 1;
      done &= done - 1;
    }
  }
}

void composite_backward_avx2(const SplatCoeffs& s, int list_pos, const CompositeLimits& lim, BackwardSpan& span,
                             SplatCoeffGrad& grad) {
  const __m256d mx = _mm256_set1_pd(s.mx);
  const __m256d dy = _mm256_set1_pd(span.y - s.my);
  const __m256d ca = _mm256_set1_pd(s.ca), cb = _mm256_set1_pd(s.cb), cc = _mm256_set1_pd(s.cc);
  const __m256d op = _mm256_set1_pd(s.opacity);
  const __m256d amax = _mm256_set1_pd(lim.max_alpha);
  const __m256d cutoff = _mm256_set1_pd(lim.cutoff);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d neg_half = _mm256_set1_pd(-0.5);
  const __m256d sr = _mm256_set1_pd(s.r), sg = _mm256_set1_pd(s.g), sb = _mm256_set1_pd(s.b);
  const __m256d sz = _mm256_set1_pd(s.depth);
  const __m256d offsets = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);
  const __m128i pos = _mm_set1_epi32(list_pos);

  __m256d acc_r = _mm256_setzero_pd(), acc_g = _mm256_setzero_pd(), acc_b = _mm256_setzero_pd();
  __m256d acc_z = _mm256_setzero_pd(), acc_op = _mm256_setzero_pd();
  __m256d acc_mx = _mm256_setzero_pd(), acc_my = _mm256_setzero_pd();
  __m256d acc_ca = _mm256_setzero_pd(), acc_cb = _mm256_setzero_pd(), acc_cc = _mm256_setzero_pd();

  for (int i = 0; i < span.count; i += 4) {
    const int remaining = span.count - i;
    const __m256i lanes = lane_mask64(remaining);
    const __m128i lanes32 = lane_mask32(remaining);
    const __m128i last = _mm_maskload_epi32(span.last + i, lanes32);
    const __m256i valid64 = _mm256_cvtepi32_epi64(_mm_cmpgt_epi32(last, pos));
    const __m256d valid = _mm256_castsi256_pd(_mm256_and_si256(valid64, lanes));
    if (_mm256_movemask_pd(valid) == 0) continue;

    const __m256d x = _mm256_add_pd(_mm256_set1_pd(span.x0 + i), offsets);
    const __m256d dx = _mm256_sub_pd(x, mx);
    const __m256d qx = _mm256_add_pd(_mm256_mul_pd(ca, dx), _mm256_mul_pd(cb, dy));
    const __m256d qy = _mm256_add_pd(_mm256_mul_pd(cb, dx), _mm256_mul_pd(cc, dy));
    const __m256d m = _mm256_add_pd(_mm256_mul_pd(dx, qx), _mm256_mul_pd(dy, qy));
    const __m256d inside = _mm256_and_pd(valid, _mm256_cmp_pd(m, cutoff, _CMP_LE_OQ));
    if (_mm256_movemask_pd(inside) == 0) continue;

    const __m256d gauss = exp_pd(_mm256_mul_pd(neg_half, m));
    const __m256d raw = _mm256_mul_pd(op, gauss);
    const __m256d alpha = _mm256_and_pd(_mm256_min_pd(amax, raw), inside);
    const __m256d keep = _mm256_sub_pd(one, alpha);

    const __m256i store = _mm256_castpd_si256(inside);
    const __m256d T_out = _mm256_maskload_pd(span.T + i, lanes);
    const __m256d T_in = _mm256_div_pd(T_out, keep);
    const __m256d gr = _mm256_maskload_pd(span.grad_r + i, lanes);
    const __m256d gg = _mm256_maskload_pd(span.grad_g + i, lanes);
    const __m256d gb = _mm256_maskload_pd(span.grad_b + i, lanes);
    const __m256d gz = _mm256_maskload_pd(span.grad_depth + i, lanes);
    const __m256d weight = _mm256_add_pd(
        _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(gr, sr), _mm256_mul_pd(gg, sg)), _mm256_mul_pd(gb, sb)),
        _mm256_mul_pd(gz, sz));
    const __m256d suffix = _mm256_maskload_pd(span.suffix + i, lanes);
    const __m256d d_alpha = _mm256_sub_pd(_mm256_mul_pd(T_in, weight), _mm256_div_pd(suffix, keep));
    const __m256d contrib = _mm256_mul_pd(alpha, T_in);
    _mm256_maskstore_pd(span.suffix + i, store, _mm256_add_pd(suffix, _mm256_mul_pd(weight, contrib)));
    _mm256_maskstore_pd(span.T + i, store, T_in);

    acc_r = _mm256_add_pd(acc_r, _mm256_mul_pd(gr, contrib));
    acc_g = _mm256_add_pd(acc_g, _mm256_mul_pd(gg, contrib));
    acc_b = _mm256_add_pd(acc_b, _mm256_mul_pd(gb, contrib));
    acc_z = _mm256_add_pd(acc_z, _mm256_mul_pd(gz, contrib));

    const __m256d unclamped = _mm256_and_pd(inside, _mm256_cmp_pd(raw, amax, _CMP_LT_OQ));
    const __m256d da = _mm256_and_pd(d_alpha, unclamped);
    acc_op = _mm256_add_pd(acc_op, _mm256_mul_pd(da, gauss));
    const __m256d dp = _mm256_mul_pd(da, raw);
    acc_mx = _mm256_add_pd(acc_mx, _mm256_mul_pd(dp, qx));
    acc_my = _mm256_add_pd(acc_my, _mm256_mul_pd(dp, qy));
    const __m256d half_dp = _mm256_mul_pd(neg_half, dp);
    acc_ca = _mm256_add_pd(acc_ca, _mm256_mul_pd(_mm256_mul_pd(half_dp, dx), dx));
    acc_cb = _mm256_sub_pd(acc_cb, _mm256_mul_pd(_mm256_mul_pd(dp, dx), dy));
    acc_cc = _mm256_add_pd(acc_cc, _mm256_mul_pd(_mm256_mul_pd(half_dp, dy), dy));
  }

  grad.r += hsum(acc_r);
  grad.g += hsum(acc_g);
  grad.b += hsum(acc_b);
  grad.depth += hsum(acc_z);
  grad.opacity += hsum(acc_op);
  grad.mx += hsum(acc_mx);
  grad.my += hsum(acc_my);
  grad.ca += hsum(acc_ca);
  grad.cb += hsum(acc_cb);
  grad.cc += hsum(acc_cc);
}

void project_batch_avx2(const double* xyz, const int* faces, const ProjectionFrame* frames, std::size_t n,
                        double* bary, std::uint8_t* outside) {
  static_assert(sizeof(ProjectionFrame) == 9 * sizeof(double));
  const double* base = reinterpret_cast<const double*>(frames);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m128i face = _mm_loadu_si128(reinterpret_cast<const __m128i*>(faces + i));
    const __m128i row = _mm_mullo_epi32(face, _mm_set1_epi32(9));
    const __m128i pidx = _mm_setr_epi32(static_cast<int>(3 * i), static_cast<int>(3 * i + 3),
                                        static_cast<int>(3 * i + 6), static_cast<int>(3 * i + 9));
    __m256d s = _mm256_setzero_pd(), t = _mm256_setzero_pd();
    for (int k = 0; k < 3; ++k) {
      const __m128i kk = _mm_set1_epi32(k);
      const __m256d p = _mm256_i32gather_pd(xyz, _mm_add_epi32(pidx, kk), 8);
      const __m256d o = _mm256_i32gather_pd(base, _mm_add_epi32(row, kk), 8);
      const __m256d du = _mm256_i32gather_pd(base, _mm_add_epi32(row, _mm_set1_epi32(3 + k)), 8);
      const __m256d dv = _mm256_i32gather_pd(base, _mm_add_epi32(row, _mm_set1_epi32(6 + k)), 8);
      const __m256d d = _mm256_sub_pd(p, o);
      s = _mm256_add_pd(s, _mm256_mul_pd(d, du));
      t = _mm256_add_pd(t, _mm256_mul_pd(d, dv));
    }
    const __m256d a = _mm256_sub_pd(_mm256_sub_pd(one, s), t);
    alignas(32) double la[4], ls[4], lt[4];
    _mm256_store_pd(la, a);
    _mm256_store_pd(ls, s);
    _mm256_store_pd(lt, t);
    const __m256d neg = _mm256_or_pd(_mm256_or_pd(_mm256_cmp_pd(a, zero, _CMP_LT_OQ), _mm256_cmp_pd(s, zero, _CMP_LT_OQ)),
                                     _mm256_cmp_pd(t, zero, _CMP_LT_OQ));
    const int bits = _mm256_movemask_pd(neg);
    for (int k = 0; k < 4; ++k) {
      bary[3 * (i + k)] = la[k];
      bary[3 * (i + k) + 1] = ls[k];
      bary[3 * (i + k) + 2] = lt[k];
      outside[i + k] = static_cast<std::uint8_t>((bits >> k) & 1);
    }
  }
  if (i < n) detail::scalar_table().project_batch(xyz + 3 * i, faces + i, frames, n - i, bary + 3 * i, outside + i);
}

void tsdf_row_avx2(const TsdfRow& row) {
  const __m256d bx = _mm256_set1_pd(row.base[0]), by = _mm256_set1_pd(row.base[1]), bz = _mm256_set1_pd(row.base[2]);
  const __m256d sx = _mm256_set1_pd(row.step[0]), sy = _mm256_set1_pd(row.step[1]), sz = _mm256_set1_pd(row.step[2]);
  const __m256d fx = _mm256_set1_pd(row.fx), fy = _mm256_set1_pd(row.fy);
  const __m256d cx = _mm256_set1_pd(row.cx), cy = _mm256_set1_pd(row.cy);
  const __m256d half = _mm256_set1_pd(0.5), one = _mm256_set1_pd(1.0), zero = _mm256_setzero_pd();
  const __m256d width = _mm256_set1_pd(row.width), height = _mm256_set1_pd(row.height);
  const __m256d near = _mm256_set1_pd(1e-9);
  const __m256d trunc = _mm256_set1_pd(row.truncation), neg_trunc = _mm256_set1_pd(-row.truncation);
  const __m256d offsets = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);

  for (int i = 0; i < row.count; i += 4) {
    const int remaining = row.count - i;
    const __m256i lanes = lane_mask64(remaining);
    const __m256d idx = _mm256_add_pd(_mm256_set1_pd(static_cast<double>(i)), offsets);
    const __m256d x = _mm256_add_pd(bx, _mm256_mul_pd(idx, sx));
    const __m256d y = _mm256_add_pd(by, _mm256_mul_pd(idx, sy));
    const __m256d z = _mm256_add_pd(bz, _mm256_mul_pd(idx, sz));
    __m256d ok = _mm256_and_pd(_mm256_castsi256_pd(lanes), _mm256_cmp_pd(z, near, _CMP_GT_OQ));
    const __m256d u = _mm256_floor_pd(_mm256_add_pd(_mm256_add_pd(_mm256_div_pd(_mm256_mul_pd(fx, x), z), cx), half));
    const __m256d v = _mm256_floor_pd(_mm256_add_pd(_mm256_add_pd(_mm256_div_pd(_mm256_mul_pd(fy, y), z), cy), half));
    ok = _mm256_and_pd(ok, _mm256_cmp_pd(u, zero, _CMP_GE_OQ));
    ok = _mm256_and_pd(ok, _mm256_cmp_pd(u, width, _CMP_LT_OQ));
    ok = _mm256_and_pd(ok, _mm256_cmp_pd(v, zero, _CMP_GE_OQ));
    ok = _mm256_and_pd(ok, _mm256_cmp_pd(v, height, _CMP_LT_OQ));
    if (_mm256_movemask_pd(ok) == 0) continue;

    const __m256d lin = _mm256_and_pd(ok, _mm256_add_pd(_mm256_mul_pd(v, width), u));
    const __m128i pix = _mm256_cvttpd_epi32(lin);
    const __m256d d = _mm256_mask_i32gather_pd(zero, row.depth, pix, ok, 8);
    const __m256d sdf = _mm256_sub_pd(d, z);
    ok = _mm256_and_pd(ok, _mm256_cmp_pd(d, zero, _CMP_GT_OQ));
    ok = _mm256_and_pd(ok, _mm256_cmp_pd(sdf, neg_trunc, _CMP_GE_OQ));
    if (_mm256_movemask_pd(ok) == 0) continue;

    const __m256d val = _mm256_min_pd(one, _mm256_div_pd(sdf, trunc));
    const __m256d w = _mm256_maskload_pd(row.weight + i, lanes);
    const __m256d t = _mm256_maskload_pd(row.tsdf + i, lanes);
    const __m256d w1 = _mm256_add_pd(w, one);
    const __m256d tn = _mm256_div_pd(_mm256_add_pd(_mm256_mul_pd(t, w), val), w1);
    const __m256i store = _mm256_castpd_si256(ok);
    _mm256_maskstore_pd(row.tsdf + i, store, tn);
    _mm256_maskstore_pd(row.weight + i, store, w1);
  }
}

}  // namespace

namespace detail {
const KernelTable& avx2_table() {
  static const KernelTable table{Isa::Avx2, composite_avx2, composite_backward_avx2, project_batch_avx2, tsdf_row_avx2};
  return table;
}
}  // namespace detail

}  // namespace meshsplat::simd
