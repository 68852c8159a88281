// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma in this TU only and
// selected at runtime (see kernels_dispatch.cpp). Every function must be
// bit-identical to its scalar reference: vector lanes mirror the scalar lane
// striping, tails are handled in the same lane slots, and the horizontal
// combines replicate combine8/combine4 from kernels_scalar.cpp.

#include "synbt/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cassert>
#include <cmath>
#include <limits>

namespace synbt::kern {
namespace {

void a_add(const float* a, const float* b, float* dst, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void a_sub(const float* a, const float* b, float* dst, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void a_mul(const float* a, const float* b, float* dst, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void a_axpy(float a, const float* x, float* y, size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i,
                         _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void a_scale(float a, float* x, size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

void a_lrelu(const float* x, float* y, float slope, size_t n) {
    const __m256 vs = _mm256_set1_ps(slope);
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vx = _mm256_loadu_ps(x + i);
        const __m256 mask = _mm256_cmp_ps(vx, zero, _CMP_GT_OQ);
        _mm256_storeu_ps(y + i, _mm256_blendv_ps(_mm256_mul_ps(vs, vx), vx, mask));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void a_lrelu_bwd(const float* x, const float* dy, float* dx, float slope, size_t n) {
    const __m256 vs = _mm256_set1_ps(slope);
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vx = _mm256_loadu_ps(x + i);
        const __m256 vdy = _mm256_loadu_ps(dy + i);
        const __m256 mask = _mm256_cmp_ps(vx, zero, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_blendv_ps(_mm256_mul_ps(vs, vdy), vdy, mask));
    }
    for (; i < n; ++i) dx[i] = x[i] > 0.0f ? dy[i] : slope * dy[i];
}

float combine8(const float* l) {
    const float q0 = l[0] + l[4];
    const float q1 = l[1] + l[5];
    const float q2 = l[2] + l[6];
    const float q3 = l[3] + l[7];
    const float d0 = q0 + q2;
    const float d1 = q1 + q3;
    return d0 + d1;
}

double combine4(const double* l) {
    const double s0 = l[0] + l[2];
    const double s1 = l[1] + l[3];
    return s0 + s1;
}

float a_dot(const float* a, const float* b, size_t n) {
    __m256 vacc = _mm256_setzero_ps();
    const size_t n8 = n - n % 8;
    for (size_t i = 0; i < n8; i += 8)
        vacc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), vacc);
    alignas(32) float lane[8];
    _mm256_store_ps(lane, vacc);
    for (size_t j = 0; j < n - n8; ++j) lane[j] = std::fma(a[n8 + j], b[n8 + j], lane[j]);
    return combine8(lane);
}

double a_sum(const float* x, size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    const size_t n4 = n - n % 4;
    for (size_t i = 0; i < n4; i += 4)
        vacc = _mm256_add_pd(vacc, _mm256_cvtps_pd(_mm_loadu_ps(x + i)));
    alignas(32) double lane[4];
    _mm256_store_pd(lane, vacc);
    for (size_t j = 0; j < n - n4; ++j) lane[j] += static_cast<double>(x[n4 + j]);
    return combine4(lane);
}

double a_sumsq(const float* x, size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    const size_t n4 = n - n % 4;
    for (size_t i = 0; i < n4; i += 4) {
        const __m256d d = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
        vacc = _mm256_add_pd(vacc, _mm256_mul_pd(d, d));
    }
    alignas(32) double lane[4];
    _mm256_store_pd(lane, vacc);
    for (size_t j = 0; j < n - n4; ++j) {
        const double d = static_cast<double>(x[n4 + j]);
        lane[j] += d * d;
    }
    return combine4(lane);
}

double a_l1_diff(const float* a, const float* b, size_t n) {
    const __m256d signmask = _mm256_set1_pd(-0.0);
    __m256d vacc = _mm256_setzero_pd();
    const size_t n4 = n - n % 4;
    for (size_t i = 0; i < n4; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_cvtps_pd(_mm_loadu_ps(a + i)),
                                        _mm256_cvtps_pd(_mm_loadu_ps(b + i)));
        vacc = _mm256_add_pd(vacc, _mm256_andnot_pd(signmask, d));
    }
    alignas(32) double lane[4];
    _mm256_store_pd(lane, vacc);
    for (size_t j = 0; j < n - n4; ++j)
        lane[j] += std::fabs(static_cast<double>(a[n4 + j]) - static_cast<double>(b[n4 + j]));
    return combine4(lane);
}

double a_sq_diff(const float* a, const float* b, size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    const size_t n4 = n - n % 4;
    for (size_t i = 0; i < n4; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_cvtps_pd(_mm_loadu_ps(a + i)),
                                        _mm256_cvtps_pd(_mm_loadu_ps(b + i)));
        vacc = _mm256_add_pd(vacc, _mm256_mul_pd(d, d));
    }
    alignas(32) double lane[4];
    _mm256_store_pd(lane, vacc);
    for (size_t j = 0; j < n - n4; ++j) {
        const double d = static_cast<double>(a[n4 + j]) - static_cast<double>(b[n4 + j]);
        lane[j] += d * d;
    }
    return combine4(lane);
}

void a_adam(float* p, const float* g, float* m, float* v, size_t n, float lr_t, float b1, float b2,
            float eps) {
    const float c1s = 1.0f - b1;
    const float c2s = 1.0f - b2;
    const __m256 vb1 = _mm256_set1_ps(b1);
    const __m256 vb2 = _mm256_set1_ps(b2);
    const __m256 vc1 = _mm256_set1_ps(c1s);
    const __m256 vc2 = _mm256_set1_ps(c2s);
    const __m256 vlr = _mm256_set1_ps(lr_t);
    const __m256 veps = _mm256_set1_ps(eps);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vg = _mm256_loadu_ps(g + i);
        __m256 vm = _mm256_fmadd_ps(vb1, _mm256_loadu_ps(m + i), _mm256_mul_ps(vc1, vg));
        __m256 vv = _mm256_fmadd_ps(vb2, _mm256_loadu_ps(v + i),
                                    _mm256_mul_ps(vc2, _mm256_mul_ps(vg, vg)));
        _mm256_storeu_ps(m + i, vm);
        _mm256_storeu_ps(v + i, vv);
        const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(vv), veps);
        const __m256 upd = _mm256_mul_ps(vlr, _mm256_div_ps(vm, den));
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = std::fma(b1, m[i], c1s * g[i]);
        v[i] = std::fma(b2, v[i], c2s * (g[i] * g[i]));
        p[i] = p[i] - lr_t * (m[i] / (std::sqrt(v[i]) + eps));
    }
}

template <int NACC>
void conv_fwd_vec(const ConvGeom& g, const float* inp, const float* w, const float* bias,
                  float* out) {
    const int k3 = g.k * g.k * g.k;
    const size_t prow = static_cast<size_t>(g.pnz) * g.cin;
    const size_t pslab = static_cast<size_t>(g.pny) * prow;
    for (int ox = 0; ox < g.onx; ++ox)
        for (int oy = 0; oy < g.ony; ++oy)
            for (int oz = 0; oz < g.onz; ++oz) {
                __m256 acc[NACC];
                for (int j = 0; j < NACC; ++j) acc[j] = _mm256_loadu_ps(bias + 8 * j);
                const size_t base = static_cast<size_t>(ox * g.stride) * pslab +
                                    static_cast<size_t>(oy * g.stride) * prow +
                                    static_cast<size_t>(oz * g.stride) * g.cin;
                for (int tap = 0; tap < k3; ++tap) {
                    const int tx = tap / (g.k * g.k);
                    const int ty = (tap / g.k) % g.k;
                    const int tz = tap % g.k;
                    const float* in_site = inp + base + static_cast<size_t>(tx) * pslab +
                                           static_cast<size_t>(ty) * prow +
                                           static_cast<size_t>(tz) * g.cin;
                    const float* wtap = w + static_cast<size_t>(tap) * g.cin * g.cout;
                    for (int ic = 0; ic < g.cin; ++ic) {
                        const __m256 va = _mm256_set1_ps(in_site[ic]);
                        const float* wrow = wtap + static_cast<size_t>(ic) * g.cout;
                        for (int j = 0; j < NACC; ++j)
                            acc[j] = _mm256_fmadd_ps(va, _mm256_loadu_ps(wrow + 8 * j), acc[j]);
                    }
                }
                float* orow =
                    out + ((static_cast<size_t>(ox) * g.ony + oy) * g.onz + oz) * g.cout;
                for (int j = 0; j < NACC; ++j) _mm256_storeu_ps(orow + 8 * j, acc[j]);
            }
}

void a_conv3d_fwd(const ConvGeom& g, const float* inp, const float* w, const float* bias,
                  float* out) {
    switch (g.cout % 8 == 0 ? g.cout / 8 : 0) {
        case 1: conv_fwd_vec<1>(g, inp, w, bias, out); return;
        case 2: conv_fwd_vec<2>(g, inp, w, bias, out); return;
        case 3: conv_fwd_vec<3>(g, inp, w, bias, out); return;
        case 4: conv_fwd_vec<4>(g, inp, w, bias, out); return;
        case 5: conv_fwd_vec<5>(g, inp, w, bias, out); return;
        case 6: conv_fwd_vec<6>(g, inp, w, bias, out); return;
        case 7: conv_fwd_vec<7>(g, inp, w, bias, out); return;
        case 8: conv_fwd_vec<8>(g, inp, w, bias, out); return;
        default: scalar_ops().conv3d_fwd(g, inp, w, bias, out); return;
    }
}

template <int NACC>
void conv_bwd_data_vec(const ConvGeom& g, const float* dout, const float* wT, float* dinp) {
    const int k3 = g.k * g.k * g.k;
    const size_t prow = static_cast<size_t>(g.pnz) * g.cin;
    const size_t pslab = static_cast<size_t>(g.pny) * prow;
    for (int ox = 0; ox < g.onx; ++ox)
        for (int oy = 0; oy < g.ony; ++oy)
            for (int oz = 0; oz < g.onz; ++oz) {
                const float* drow =
                    dout + ((static_cast<size_t>(ox) * g.ony + oy) * g.onz + oz) * g.cout;
                const size_t base = static_cast<size_t>(ox * g.stride) * pslab +
                                    static_cast<size_t>(oy * g.stride) * prow +
                                    static_cast<size_t>(oz * g.stride) * g.cin;
                for (int tap = 0; tap < k3; ++tap) {
                    const int tx = tap / (g.k * g.k);
                    const int ty = (tap / g.k) % g.k;
                    const int tz = tap % g.k;
                    __m256 acc[NACC];
                    for (int j = 0; j < NACC; ++j) acc[j] = _mm256_setzero_ps();
                    const float* wtap = wT + static_cast<size_t>(tap) * g.cout * g.cin;
                    for (int oc = 0; oc < g.cout; ++oc) {
                        const __m256 va = _mm256_set1_ps(drow[oc]);
                        const float* wrow = wtap + static_cast<size_t>(oc) * g.cin;
                        for (int j = 0; j < NACC; ++j)
                            acc[j] = _mm256_fmadd_ps(va, _mm256_loadu_ps(wrow + 8 * j), acc[j]);
                    }
                    float* din_site = dinp + base + static_cast<size_t>(tx) * pslab +
                                      static_cast<size_t>(ty) * prow + static_cast<size_t>(tz) * g.cin;
                    for (int j = 0; j < NACC; ++j)
                        _mm256_storeu_ps(din_site + 8 * j,
                                         _mm256_add_ps(_mm256_loadu_ps(din_site + 8 * j), acc[j]));
                }
            }
}

void a_conv3d_bwd_data(const ConvGeom& g, const float* dout, const float* wT, float* dinp) {
    switch (g.cin % 8 == 0 ? g.cin / 8 : 0) {
        case 1: conv_bwd_data_vec<1>(g, dout, wT, dinp); return;
        case 2: conv_bwd_data_vec<2>(g, dout, wT, dinp); return;
        case 3: conv_bwd_data_vec<3>(g, dout, wT, dinp); return;
        case 4: conv_bwd_data_vec<4>(g, dout, wT, dinp); return;
        case 5: conv_bwd_data_vec<5>(g, dout, wT, dinp); return;
        case 6: conv_bwd_data_vec<6>(g, dout, wT, dinp); return;
        case 7: conv_bwd_data_vec<7>(g, dout, wT, dinp); return;
        case 8: conv_bwd_data_vec<8>(g, dout, wT, dinp); return;
        default: scalar_ops().conv3d_bwd_data(g, dout, wT, dinp); return;
    }
}

template <int NACC>
void conv_bwd_wb_vec(const ConvGeom& g, const float* inp, const float* dout, float* dw, float* db) {
    const int k3 = g.k * g.k * g.k;
    const size_t prow = static_cast<size_t>(g.pnz) * g.cin;
    const size_t pslab = static_cast<size_t>(g.pny) * prow;
    for (int ox = 0; ox < g.onx; ++ox)
        for (int oy = 0; oy < g.ony; ++oy)
            for (int oz = 0; oz < g.onz; ++oz) {
                const float* drow =
                    dout + ((static_cast<size_t>(ox) * g.ony + oy) * g.onz + oz) * g.cout;
                __m256 vd[NACC];
                for (int j = 0; j < NACC; ++j) {
                    vd[j] = _mm256_loadu_ps(drow + 8 * j);
                    _mm256_storeu_ps(db + 8 * j, _mm256_add_ps(_mm256_loadu_ps(db + 8 * j), vd[j]));
                }
                const size_t base = static_cast<size_t>(ox * g.stride) * pslab +
                                    static_cast<size_t>(oy * g.stride) * prow +
                                    static_cast<size_t>(oz * g.stride) * g.cin;
                for (int tap = 0; tap < k3; ++tap) {
                    const int tx = tap / (g.k * g.k);
                    const int ty = (tap / g.k) % g.k;
                    const int tz = tap % g.k;
                    const float* in_site = inp + base + static_cast<size_t>(tx) * pslab +
                                           static_cast<size_t>(ty) * prow +
                                           static_cast<size_t>(tz) * g.cin;
                    float* dwtap = dw + static_cast<size_t>(tap) * g.cin * g.cout;
                    for (int ic = 0; ic < g.cin; ++ic) {
                        const __m256 va = _mm256_set1_ps(in_site[ic]);
                        float* dwrow = dwtap + static_cast<size_t>(ic) * g.cout;
                        for (int j = 0; j < NACC; ++j)
                            _mm256_storeu_ps(
                                dwrow + 8 * j,
                                _mm256_fmadd_ps(va, vd[j], _mm256_loadu_ps(dwrow + 8 * j)));
                    }
                }
            }
}

void a_conv3d_bwd_wb(const ConvGeom& g, const float* inp, const float* dout, float* dw, float* db) {
    switch (g.cout % 8 == 0 ? g.cout / 8 : 0) {
        case 1: conv_bwd_wb_vec<1>(g, inp, dout, dw, db); return;
        case 2: conv_bwd_wb_vec<2>(g, inp, dout, dw, db); return;
        case 3: conv_bwd_wb_vec<3>(g, inp, dout, dw, db); return;
        case 4: conv_bwd_wb_vec<4>(g, inp, dout, dw, db); return;
        case 5: conv_bwd_wb_vec<5>(g, inp, dout, dw, db); return;
        case 6: conv_bwd_wb_vec<6>(g, inp, dout, dw, db); return;
        case 7: conv_bwd_wb_vec<7>(g, inp, dout, dw, db); return;
        case 8: conv_bwd_wb_vec<8>(g, inp, dout, dw, db); return;
        default: scalar_ops().conv3d_bwd_wb(g, inp, dout, dw, db); return;
    }
}

void a_nearest_codes(const float* z, size_t sites, const float* codebook, int K, int d,
                     int32_t* out_idx) {
    const int d4 = d - d % 4;
    for (size_t s = 0; s < sites; ++s) {
        const float* zs = z + s * static_cast<size_t>(d);
        double best = std::numeric_limits<double>::infinity();
        int32_t bi = 0;
        for (int kk = 0; kk < K; ++kk) {
            const float* e = codebook + static_cast<size_t>(kk) * d;
            __m256d vacc = _mm256_setzero_pd();
            for (int i = 0; i < d4; i += 4) {
                const __m256d diff =
                    _mm256_sub_pd(_mm256_cvtps_pd(_mm_loadu_ps(zs + i)),
                                  _mm256_cvtps_pd(_mm_loadu_ps(e + i)));
                vacc = _mm256_add_pd(vacc, _mm256_mul_pd(diff, diff));
            }
            alignas(32) double lane[4];
            _mm256_store_pd(lane, vacc);
            for (int j = 0; j < d - d4; ++j) {
                const double diff = static_cast<double>(zs[d4 + j]) - static_cast<double>(e[d4 + j]);
                lane[j] += diff * diff;
            }
            const double dist = combine4(lane);
            if (dist < best) {
                best = dist;
                bi = kk;
            }
        }
        out_idx[s] = bi;
    }
}

}  // namespace

const KernelOps* avx2_ops_impl() {
    static const KernelOps ops = {
        "avx2",      a_add,    a_sub,     a_mul,        a_axpy,
        a_scale,     a_lrelu,  a_lrelu_bwd, a_dot,      a_sum,
        a_sumsq,     a_l1_diff, a_sq_diff, a_adam,      a_conv3d_fwd,
        a_conv3d_bwd_data, a_conv3d_bwd_wb, a_nearest_codes,
    };
    return &ops;
}

}  // namespace synbt::kern

#else

namespace synbt::kern {
const KernelOps* avx2_ops_impl() { return nullptr; }
}  // namespace synbt::kern

#endif
