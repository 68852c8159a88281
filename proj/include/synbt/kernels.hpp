#pragma once

#include <cstddef>
#include <cstdint>

namespace synbt::kern {

// 3-D convolution geometry, channel-last data. The input pointer is the
// already-padded buffer (pad = k/2 per side for k=3, none for k=1); padding
// and cropping live in the nn layer so every variant sees identical memory.
//
// Weight layout: w[tap][cin][cout], taps in (dx,dy,dz) row-major order.
// Transposed weights wT[tap][cout][cin] are used by bwd_data.
struct ConvGeom {
    int pnx, pny, pnz;  // padded input dims
    int cin;
    int onx, ony, onz;  // output dims
    int cout;
    int k;       // 1 or 3
    int stride;  // 1 or 2
};

// One kernel variant. Scalar and SIMD variants are required to produce
// bit-identical results: same accumulation order, same lane striping, fused
// multiply-add exactly where the scalar code calls std::fma.
struct KernelOps {
    const char* name;

    // elementwise
    void (*add)(const float* a, const float* b, float* dst, size_t n);
    void (*sub)(const float* a, const float* b, float* dst, size_t n);
    void (*mul)(const float* a, const float* b, float* dst, size_t n);
    void (*axpy)(float a, const float* x, float* y, size_t n);  // y += a*x, fused
    void (*scale)(float a, float* x, size_t n);
    void (*lrelu)(const float* x, float* y, float slope, size_t n);
    void (*lrelu_bwd)(const float* x, const float* dy, float* dx, float slope, size_t n);

    // reductions; deterministic lane-striped accumulation (see kernels_scalar.cpp
    // for the normative striping/combine order)
    float (*dot)(const float* a, const float* b, size_t n);
    double (*sum)(const float* x, size_t n);
    double (*sumsq)(const float* x, size_t n);
    double (*l1_diff)(const float* a, const float* b, size_t n);
    double (*sq_diff)(const float* a, const float* b, size_t n);

    void (*adam)(float* p, const float* g, float* m, float* v, size_t n, float lr_t, float b1,
                 float b2, float eps);

    void (*conv3d_fwd)(const ConvGeom& g, const float* inp, const float* w, const float* bias,
                       float* out);
    // dinp accumulated (+=) into a zeroed padded buffer
    void (*conv3d_bwd_data)(const ConvGeom& g, const float* dout, const float* wT, float* dinp);
    // dw/db accumulated (+=)
    void (*conv3d_bwd_wb)(const ConvGeom& g, const float* inp, const float* dout, float* dw,
                          float* db);

    // per-site nearest codebook row by squared L2, lowest index on ties;
    // z is sites*d contiguous, codebook K*d
    void (*nearest_codes)(const float* z, size_t sites, const float* codebook, int K, int d,
                          int32_t* out_idx);
};

const KernelOps& scalar_ops();

// AVX2+FMA variant; null when not compiled in or not supported at runtime.
const KernelOps* avx2_ops();

bool avx2_supported();

// Active variant: AVX2 when available unless forced scalar.
const KernelOps& ops();
void force_scalar(bool on);  // test/debug hook; also honors SYNBT_FORCE_SCALAR=1

// Shared channel cap for stack accumulators inside conv kernels.
inline constexpr int kMaxChannels = 256;

}  // namespace synbt::kern
