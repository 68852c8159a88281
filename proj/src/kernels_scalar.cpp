// Scalar reference kernels. These define the normative arithmetic: the AVX2
// variants in kernels_avx2.cpp must match them bit-for-bit, so reductions use
// the same lane striping (8 float / 4 double lanes, remainder element j into
// lane j) and the same pairwise combine tree, and fused multiply-adds appear
// exactly where a SIMD variant would use an FMA instruction.

#include "synbt/kernels.hpp"

#include <cassert>
#include <cmath>
#include <limits>

namespace synbt::kern {
namespace {

void s_add(const float* a, const float* b, float* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void s_sub(const float* a, const float* b, float* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void s_mul(const float* a, const float* b, float* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void s_axpy(float a, const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void s_scale(float a, float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] *= a;
}

void s_lrelu(const float* x, float* y, float slope, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void s_lrelu_bwd(const float* x, const float* dy, float* dx, float slope, size_t n) {
    for (size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0f ? dy[i] : slope * dy[i];
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

float s_dot(const float* a, const float* b, size_t n) {
    float lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    const size_t n8 = n - n % 8;
    for (size_t i = 0; i < n8; i += 8)
        for (size_t j = 0; j < 8; ++j) lane[j] = std::fma(a[i + j], b[i + j], lane[j]);
    for (size_t j = 0; j < n - n8; ++j) lane[j] = std::fma(a[n8 + j], b[n8 + j], lane[j]);
    return combine8(lane);
}

double s_sum(const float* x, size_t n) {
    double lane[4] = {0, 0, 0, 0};
    const size_t n4 = n - n % 4;
    for (size_t i = 0; i < n4; i += 4)
        for (size_t j = 0; j < 4; ++j) lane[j] += static_cast<double>(x[i + j]);
    for (size_t j = 0; j < n - n4; ++j) lane[j] += static_cast<double>(x[n4 + j]);
    return combine4(lane);
}

double s_sumsq(const float* x, size_t n) {
    double lane[4] = {0, 0, 0, 0};
    const size_t n4 = n - n % 4;
    for (size_t i = 0; i < n4; i += 4)
        for (size_t j = 0; j < 4; ++j) {
            const double d = static_cast<double>(x[i + j]);
            lane[j] += d * d;
        }
    for (size_t j = 0; j < n - n4; ++j) {
        const double d = static_cast<double>(x[n4 + j]);
        lane[j] += d * d;
    }
    return combine4(lane);
}

double s_l1_diff(const float* a, const float* b, size_t n) {
    double lane[4] = {0, 0, 0, 0};
    const size_t n4 = n - n % 4;
    for (size_t i = 0; i < n4; i += 4)
        for (size_t j = 0; j < 4; ++j)
            lane[j] += std::fabs(static_cast<double>(a[i + j]) - static_cast<double>(b[i + j]));
    for (size_t j = 0; j < n - n4; ++j)
        lane[j] += std::fabs(static_cast<double>(a[n4 + j]) - static_cast<double>(b[n4 + j]));
    return combine4(lane);
}

double s_sq_diff(const float* a, const float* b, size_t n) {
    double lane[4] = {0, 0, 0, 0};
    const size_t n4 = n - n % 4;
    for (size_t i = 0; i < n4; i += 4)
        for (size_t j = 0; j < 4; ++j) {
            const double d = static_cast<double>(a[i + j]) - static_cast<double>(b[i + j]);
            lane[j] += d * d;
        }
    for (size_t j = 0; j < n - n4; ++j) {
        const double d = static_cast<double>(a[n4 + j]) - static_cast<double>(b[n4 + j]);
        lane[j] += d * d;
    }
    return combine4(lane);
}

void s_adam(float* p, const float* g, float* m, float* v, size_t n, float lr_t, float b1, float b2,
            float eps) {
    const float c1 = 1.0f - b1;
    const float c2 = 1.0f - b2;
    for (size_t i = 0; i < n; ++i) {
        m[i] = std::fma(b1, m[i], c1 * g[i]);
        v[i] = std::fma(b2, v[i], c2 * (g[i] * g[i]));
        p[i] = p[i] - lr_t * (m[i] / (std::sqrt(v[i]) + eps));
    }
}

void s_conv3d_fwd(const ConvGeom& g, const float* inp, const float* w, const float* bias,
                  float* out) {
    assert(g.cout <= kMaxChannels);
    const int k3 = g.k * g.k * g.k;
    const size_t prow = static_cast<size_t>(g.pnz) * g.cin;
    const size_t pslab = static_cast<size_t>(g.pny) * prow;
    float acc[kMaxChannels];
    for (int ox = 0; ox < g.onx; ++ox)
        for (int oy = 0; oy < g.ony; ++oy)
            for (int oz = 0; oz < g.onz; ++oz) {
                for (int oc = 0; oc < g.cout; ++oc) acc[oc] = bias[oc];
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
                        const float a = in_site[ic];
                        const float* wrow = wtap + static_cast<size_t>(ic) * g.cout;
                        for (int oc = 0; oc < g.cout; ++oc) acc[oc] = std::fma(a, wrow[oc], acc[oc]);
                    }
                }
                float* orow =
                    out + ((static_cast<size_t>(ox) * g.ony + oy) * g.onz + oz) * g.cout;
                for (int oc = 0; oc < g.cout; ++oc) orow[oc] = acc[oc];
            }
}

void s_conv3d_bwd_data(const ConvGeom& g, const float* dout, const float* wT, float* dinp) {
    assert(g.cin <= kMaxChannels);
    const int k3 = g.k * g.k * g.k;
    const size_t prow = static_cast<size_t>(g.pnz) * g.cin;
    const size_t pslab = static_cast<size_t>(g.pny) * prow;
    float acc[kMaxChannels];
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
                    for (int ic = 0; ic < g.cin; ++ic) acc[ic] = 0.0f;
                    const float* wtap = wT + static_cast<size_t>(tap) * g.cout * g.cin;
                    for (int oc = 0; oc < g.cout; ++oc) {
                        const float a = drow[oc];
                        const float* wrow = wtap + static_cast<size_t>(oc) * g.cin;
                        for (int ic = 0; ic < g.cin; ++ic) acc[ic] = std::fma(a, wrow[ic], acc[ic]);
                    }
                    float* din_site = dinp + base + static_cast<size_t>(tx) * pslab +
                                      static_cast<size_t>(ty) * prow + static_cast<size_t>(tz) * g.cin;
                    for (int ic = 0; ic < g.cin; ++ic) din_site[ic] += acc[ic];
                }
            }
}

void s_conv3d_bwd_wb(const ConvGeom& g, const float* inp, const float* dout, float* dw, float* db) {
    const int k3 = g.k * g.k * g.k;
    const size_t prow = static_cast<size_t>(g.pnz) * g.cin;
    const size_t pslab = static_cast<size_t>(g.pny) * prow;
    for (int ox = 0; ox < g.onx; ++ox)
        for (int oy = 0; oy < g.ony; ++oy)
            for (int oz = 0; oz < g.onz; ++oz) {
                const float* drow =
                    dout + ((static_cast<size_t>(ox) * g.ony + oy) * g.onz + oz) * g.cout;
                for (int oc = 0; oc < g.cout; ++oc) db[oc] += drow[oc];
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
                        const float a = in_site[ic];
                        float* dwrow = dwtap + static_cast<size_t>(ic) * g.cout;
                        for (int oc = 0; oc < g.cout; ++oc)
                            dwrow[oc] = std::fma(a, drow[oc], dwrow[oc]);
                    }
                }
            }
}

void s_nearest_codes(const float* z, size_t sites, const float* codebook, int K, int d,
                     int32_t* out_idx) {
    for (size_t s = 0; s < sites; ++s) {
        const float* zs = z + s * static_cast<size_t>(d);
        double best = std::numeric_limits<double>::infinity();
        int32_t bi = 0;
        for (int kk = 0; kk < K; ++kk) {
            const float* e = codebook + static_cast<size_t>(kk) * d;
            double lane[4] = {0, 0, 0, 0};
            const int d4 = d - d % 4;
            for (int i = 0; i < d4; i += 4)
                for (int j = 0; j < 4; ++j) {
                    const double diff =
                        static_cast<double>(zs[i + j]) - static_cast<double>(e[i + j]);
                    lane[j] += diff * diff;
                }
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

const KernelOps& scalar_ops() {
    static const KernelOps ops = {
        "scalar",    s_add,    s_sub,     s_mul,        s_axpy,
        s_scale,     s_lrelu,  s_lrelu_bwd, s_dot,      s_sum,
        s_sumsq,     s_l1_diff, s_sq_diff, s_adam,      s_conv3d_fwd,
        s_conv3d_bwd_data, s_conv3d_bwd_wb, s_nearest_codes,
    };
    return ops;
}

}  // namespace synbt::kern
