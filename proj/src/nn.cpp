#include "synbt/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "synbt/kernels.hpp"

namespace synbt::nn {

using kern::ConvGeom;
using kern::ops;

void he_init(Param& p, size_t n, size_t fan_in, Rng& rng) {
    p.resize(n);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& x : p.val) x = static_cast<float>(std * rng.normal());
}

void zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

void Adam::update(const std::vector<Param*>& params) {
    ++step;
    const double t = static_cast<double>(step);
    const double corr = std::sqrt(1.0 - std::pow(static_cast<double>(b2), t)) /
                        (1.0 - std::pow(static_cast<double>(b1), t));
    const float lr_t = static_cast<float>(lr * corr);
    for (Param* p : params)
        ops().adam(p->val.data(), p->grad.data(), p->m.data(), p->v.data(), p->val.size(), lr_t,
                   b1, b2, eps);
}

// --- Conv3d ---

void Conv3d::init(int cin_, int cout_, int k_, int stride_, Rng& rng) {
    if ((k_ != 1 && k_ != 3) || (stride_ != 1 && stride_ != 2))
        throw std::invalid_argument("conv supports k in {1,3}, stride in {1,2}");
    cin = cin_;
    cout = cout_;
    k = k_;
    stride = stride_;
    const size_t taps = static_cast<size_t>(k) * k * k;
    he_init(w, taps * static_cast<size_t>(cin) * static_cast<size_t>(cout),
            taps * static_cast<size_t>(cin), rng);
    b.resize(static_cast<size_t>(cout));
}

std::array<int, 3> Conv3d::out_dims(const std::array<int, 3>& in) const {
    const int pad = k / 2;
    std::array<int, 3> out;
    for (int a = 0; a < 3; ++a) out[a] = (in[a] + 2 * pad - k) / stride + 1;
    return out;
}

namespace {

Tensor pad_spatial(const Tensor& x, int pad) {
    if (pad == 0) return x;
    Tensor out({x.dims[0] + 2 * pad, x.dims[1] + 2 * pad, x.dims[2] + 2 * pad}, x.ch);
    for (int i = 0; i < x.dims[0]; ++i)
        for (int j = 0; j < x.dims[1]; ++j)
            for (int kk = 0; kk < x.dims[2]; ++kk)
                for (int c = 0; c < x.ch; ++c)
                    out.at(i + pad, j + pad, kk + pad, c) = x.at(i, j, kk, c);
    return out;
}

Tensor crop_spatial(const Tensor& x, int pad, const std::array<int, 3>& dims) {
    if (pad == 0) return x;
    Tensor out(dims, x.ch);
    for (int i = 0; i < dims[0]; ++i)
        for (int j = 0; j < dims[1]; ++j)
            for (int kk = 0; kk < dims[2]; ++kk)
                for (int c = 0; c < x.ch; ++c)
                    out.at(i, j, kk, c) = x.at(i + pad, j + pad, kk + pad, c);
    return out;
}

}  // namespace

Tensor Conv3d::forward(const Tensor& x, Tensor* padded_cache) const {
    if (x.ch != cin) throw std::invalid_argument("conv input channel mismatch");
    if (cin > kern::kMaxChannels || cout > kern::kMaxChannels)
        throw std::invalid_argument("conv channel count exceeds kernel cap");
    const int pad = k / 2;
    Tensor padded = pad_spatial(x, pad);
    const std::array<int, 3> od = out_dims(x.dims);
    Tensor out(od, cout);
    ConvGeom g{padded.dims[0], padded.dims[1], padded.dims[2], cin,
               od[0],          od[1],          od[2],          cout,
               k,              stride};
    ops().conv3d_fwd(g, padded.v.data(), w.val.data(), b.val.data(), out.v.data());
    if (padded_cache) *padded_cache = std::move(padded);
    return out;
}

Tensor Conv3d::backward(const Tensor& padded_in, const Tensor& dy) {
    const int pad = k / 2;
    const std::array<int, 3> in_dims{padded_in.dims[0] - 2 * pad, padded_in.dims[1] - 2 * pad,
                                     padded_in.dims[2] - 2 * pad};
    ConvGeom g{padded_in.dims[0], padded_in.dims[1], padded_in.dims[2], cin,
               dy.dims[0],        dy.dims[1],        dy.dims[2],        cout,
               k,                 stride};
    ops().conv3d_bwd_wb(g, padded_in.v.data(), dy.v.data(), w.grad.data(), b.grad.data());

    // transposed weights for the data gradient
    const int k3 = k * k * k;
    std::vector<float> wT(w.val.size());
    for (int tap = 0; tap < k3; ++tap)
        for (int ic = 0; ic < cin; ++ic)
            for (int oc = 0; oc < cout; ++oc)
                wT[(static_cast<size_t>(tap) * cout + oc) * cin + ic] =
                    w.val[(static_cast<size_t>(tap) * cin + ic) * cout + oc];
    Tensor dpad(padded_in.dims, cin);
    ops().conv3d_bwd_data(g, dy.v.data(), wT.data(), dpad.v.data());
    return crop_spatial(dpad, pad, in_dims);
}

std::vector<Param*> Conv3d::params() { return {&w, &b}; }

// --- GroupNorm ---

namespace {
constexpr double kGnEps = 1e-5;
}

void GroupNorm::init(int channels_) {
    channels = channels_;
    groups = 1;
    for (int g = std::min(8, channels); g >= 1; --g)
        if (channels % g == 0) {
            groups = g;
            break;
        }
    gamma.resize(static_cast<size_t>(channels));
    std::fill(gamma.val.begin(), gamma.val.end(), 1.0f);
    beta.resize(static_cast<size_t>(channels));
}

Tensor GroupNorm::forward(const Tensor& x, Cache* cache) const {
    if (x.ch != channels) throw std::invalid_argument("groupnorm channel mismatch");
    const int cpg = channels / groups;
    const size_t sites = x.sites();
    Tensor xhat(x.dims, x.ch);
    std::vector<double> inv_std(static_cast<size_t>(groups));
    for (int g = 0; g < groups; ++g) {
        double s = 0.0, s2 = 0.0;
        for (size_t site = 0; site < sites; ++site)
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const double v = x.v[site * x.ch + static_cast<size_t>(c)];
                s += v;
                s2 += v * v;
            }
        const double n = static_cast<double>(sites) * cpg;
        const double mean = s / n;
        const double var = std::max(0.0, s2 / n - mean * mean);
        const double is = 1.0 / std::sqrt(var + kGnEps);
        inv_std[static_cast<size_t>(g)] = is;
        for (size_t site = 0; site < sites; ++site)
            for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                xhat.v[site * x.ch + static_cast<size_t>(c)] = static_cast<float>(
                    (x.v[site * x.ch + static_cast<size_t>(c)] - mean) * is);
    }
    Tensor y(x.dims, x.ch);
    for (size_t site = 0; site < sites; ++site)
        for (int c = 0; c < channels; ++c)
            y.v[site * x.ch + static_cast<size_t>(c)] =
                gamma.val[static_cast<size_t>(c)] * xhat.v[site * x.ch + static_cast<size_t>(c)] +
                beta.val[static_cast<size_t>(c)];
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Tensor GroupNorm::backward(const Cache& cache, const Tensor& dy) {
    const Tensor& xhat = cache.xhat;
    const int cpg = channels / groups;
    const size_t sites = dy.sites();

    for (size_t site = 0; site < sites; ++site)
        for (int c = 0; c < channels; ++c) {
            const size_t i = site * static_cast<size_t>(channels) + static_cast<size_t>(c);
            gamma.grad[static_cast<size_t>(c)] += dy.v[i] * xhat.v[i];
            beta.grad[static_cast<size_t>(c)] += dy.v[i];
        }

    Tensor dx(dy.dims, dy.ch);
    for (int g = 0; g < groups; ++g) {
        double s1 = 0.0, s2 = 0.0;
        for (size_t site = 0; site < sites; ++site)
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const size_t i = site * static_cast<size_t>(channels) + static_cast<size_t>(c);
                const double dxhat = static_cast<double>(dy.v[i]) * gamma.val[static_cast<size_t>(c)];
                s1 += dxhat;
                s2 += dxhat * xhat.v[i];
            }
        const double n = static_cast<double>(sites) * cpg;
        const double m1 = s1 / n, m2 = s2 / n;
        const double is = cache.inv_std[static_cast<size_t>(g)];
        for (size_t site = 0; site < sites; ++site)
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const size_t i = site * static_cast<size_t>(channels) + static_cast<size_t>(c);
                const double dxhat = static_cast<double>(dy.v[i]) * gamma.val[static_cast<size_t>(c)];
                dx.v[i] = static_cast<float>(is * (dxhat - m1 - xhat.v[i] * m2));
            }
    }
    return dx;
}

std::vector<Param*> GroupNorm::params() { return {&gamma, &beta}; }

// --- activations / shape ops ---

Tensor lrelu(const Tensor& x) {
    Tensor y(x.dims, x.ch);
    ops().lrelu(x.v.data(), y.v.data(), kLReluSlope, x.v.size());
    return y;
}

Tensor lrelu_bwd(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.dims, x.ch);
    ops().lrelu_bwd(x.v.data(), dy.v.data(), dx.v.data(), kLReluSlope, x.v.size());
    return dx;
}

Tensor upsample2(const Tensor& x) {
    Tensor y({x.dims[0] * 2, x.dims[1] * 2, x.dims[2] * 2}, x.ch);
    for (int i = 0; i < y.dims[0]; ++i)
        for (int j = 0; j < y.dims[1]; ++j)
            for (int k = 0; k < y.dims[2]; ++k)
                for (int c = 0; c < x.ch; ++c) y.at(i, j, k, c) = x.at(i / 2, j / 2, k / 2, c);
    return y;
}

Tensor upsample2_bwd(const Tensor& dy) {
    Tensor dx({dy.dims[0] / 2, dy.dims[1] / 2, dy.dims[2] / 2}, dy.ch);
    for (int i = 0; i < dy.dims[0]; ++i)
        for (int j = 0; j < dy.dims[1]; ++j)
            for (int k = 0; k < dy.dims[2]; ++k)
                for (int c = 0; c < dy.ch; ++c) dx.at(i / 2, j / 2, k / 2, c) += dy.at(i, j, k, c);
    return dx;
}

// Half-voxel-aligned linear taps for doubling one axis: output 2m reads inputs
// (m-1, m) with weights (1/4, 3/4), output 2m+1 reads (m, m+1) with (3/4, 1/4);
// out-of-range neighbors clamp to the edge.
static void linear_taps(int o, int n, int& i0, int& i1, float& w0, float& w1) {
    if (o % 2 == 0) {
        i0 = std::max(o / 2 - 1, 0);
        i1 = o / 2;
        w0 = 0.25f;
        w1 = 0.75f;
    } else {
        i0 = o / 2;
        i1 = std::min(o / 2 + 1, n - 1);
        w0 = 0.75f;
        w1 = 0.25f;
    }
}

static Tensor double_axis_linear(const Tensor& x, int axis) {
    std::array<int, 3> od = x.dims;
    od[static_cast<size_t>(axis)] *= 2;
    Tensor y(od, x.ch);
    std::array<int, 3> o{};
    for (o[0] = 0; o[0] < od[0]; ++o[0])
        for (o[1] = 0; o[1] < od[1]; ++o[1])
            for (o[2] = 0; o[2] < od[2]; ++o[2]) {
                int i0, i1;
                float w0, w1;
                linear_taps(o[static_cast<size_t>(axis)], x.dims[static_cast<size_t>(axis)], i0, i1, w0, w1);
                std::array<int, 3> a = o, b = o;
                a[static_cast<size_t>(axis)] = i0;
                b[static_cast<size_t>(axis)] = i1;
                for (int c = 0; c < x.ch; ++c)
                    y.at(o[0], o[1], o[2], c) = w0 * x.at(a[0], a[1], a[2], c) + w1 * x.at(b[0], b[1], b[2], c);
            }
    return y;
}

static Tensor halve_axis_linear_adj(const Tensor& dy, int axis) {
    std::array<int, 3> id = dy.dims;
    id[static_cast<size_t>(axis)] /= 2;
    Tensor dx(id, dy.ch);
    std::array<int, 3> o{};
    for (o[0] = 0; o[0] < dy.dims[0]; ++o[0])
        for (o[1] = 0; o[1] < dy.dims[1]; ++o[1])
            for (o[2] = 0; o[2] < dy.dims[2]; ++o[2]) {
                int i0, i1;
                float w0, w1;
                linear_taps(o[static_cast<size_t>(axis)], id[static_cast<size_t>(axis)], i0, i1, w0, w1);
                std::array<int, 3> a = o, b = o;
                a[static_cast<size_t>(axis)] = i0;
                b[static_cast<size_t>(axis)] = i1;
                for (int c = 0; c < dy.ch; ++c) {
                    const float g = dy.at(o[0], o[1], o[2], c);
                    dx.at(a[0], a[1], a[2], c) += w0 * g;
                    dx.at(b[0], b[1], b[2], c) += w1 * g;
                }
            }
    return dx;
}

Tensor upsample2_linear(const Tensor& x) {
    Tensor y = double_axis_linear(x, 0);
    y = double_axis_linear(y, 1);
    return double_axis_linear(y, 2);
}

Tensor upsample2_linear_bwd(const Tensor& dy) {
    Tensor dx = halve_axis_linear_adj(dy, 2);
    dx = halve_axis_linear_adj(dx, 1);
    return halve_axis_linear_adj(dx, 0);
}

// --- Linear ---

void Linear::init(int cin_, int cout_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    he_init(w, static_cast<size_t>(cin) * cout, static_cast<size_t>(cin), rng);
    b.resize(static_cast<size_t>(cout));
}

std::vector<float> Linear::forward(const std::vector<float>& x) const {
    if (x.size() != static_cast<size_t>(cin)) throw std::invalid_argument("linear input size mismatch");
    std::vector<float> y(b.val.begin(), b.val.end());
    for (int i = 0; i < cin; ++i) {
        const float xi = x[static_cast<size_t>(i)];
        const float* wrow = w.val.data() + static_cast<size_t>(i) * cout;
        for (int o = 0; o < cout; ++o)
            y[static_cast<size_t>(o)] = std::fma(xi, wrow[o], y[static_cast<size_t>(o)]);
    }
    return y;
}

std::vector<float> Linear::backward(const std::vector<float>& x, const std::vector<float>& dy) {
    std::vector<float> dx(static_cast<size_t>(cin), 0.0f);
    for (int o = 0; o < cout; ++o) b.grad[static_cast<size_t>(o)] += dy[static_cast<size_t>(o)];
    for (int i = 0; i < cin; ++i) {
        const float xi = x[static_cast<size_t>(i)];
        float* gw = w.grad.data() + static_cast<size_t>(i) * cout;
        const float* wrow = w.val.data() + static_cast<size_t>(i) * cout;
        float acc = 0.0f;
        for (int o = 0; o < cout; ++o) {
            gw[o] = std::fma(xi, dy[static_cast<size_t>(o)], gw[o]);
            acc = std::fma(wrow[o], dy[static_cast<size_t>(o)], acc);
        }
        dx[static_cast<size_t>(i)] = acc;
    }
    return dx;
}

std::vector<Param*> Linear::params() { return {&w, &b}; }

Tensor concat_ch(const Tensor& a, const Tensor& b) {
    if (a.dims != b.dims) throw std::invalid_argument("concat spatial dims mismatch");
    Tensor out(a.dims, a.ch + b.ch);
    const size_t sites = a.sites();
    for (size_t s = 0; s < sites; ++s) {
        float* dst = out.v.data() + s * static_cast<size_t>(out.ch);
        const float* pa = a.v.data() + s * static_cast<size_t>(a.ch);
        const float* pb = b.v.data() + s * static_cast<size_t>(b.ch);
        std::copy(pa, pa + a.ch, dst);
        std::copy(pb, pb + b.ch, dst + a.ch);
    }
    return out;
}

std::pair<Tensor, Tensor> split_ch(const Tensor& x, int ca) {
    if (ca < 1 || ca >= x.ch) throw std::invalid_argument("split channel out of range");
    Tensor a(x.dims, ca), b(x.dims, x.ch - ca);
    const size_t sites = x.sites();
    for (size_t s = 0; s < sites; ++s) {
        const float* src = x.v.data() + s * static_cast<size_t>(x.ch);
        std::copy(src, src + ca, a.v.data() + s * static_cast<size_t>(ca));
        std::copy(src + ca, src + x.ch, b.v.data() + s * static_cast<size_t>(x.ch - ca));
    }
    return {std::move(a), std::move(b)};
}

void add_channel_bias(Tensor& x, const std::vector<float>& bias) {
    if (bias.size() != static_cast<size_t>(x.ch))
        throw std::invalid_argument("channel bias size mismatch");
    const size_t sites = x.sites();
    for (size_t s = 0; s < sites; ++s) {
        float* p = x.v.data() + s * static_cast<size_t>(x.ch);
        for (int c = 0; c < x.ch; ++c) p[c] += bias[static_cast<size_t>(c)];
    }
}

std::vector<float> channel_bias_grad(const Tensor& dy) {
    std::vector<float> g(static_cast<size_t>(dy.ch), 0.0f);
    const size_t sites = dy.sites();
    for (size_t s = 0; s < sites; ++s) {
        const float* p = dy.v.data() + s * static_cast<size_t>(dy.ch);
        for (int c = 0; c < dy.ch; ++c) g[static_cast<size_t>(c)] += p[c];
    }
    return g;
}

std::vector<float> sinusoidal_embedding(int t, int dim, double max_period) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even and >= 2");
    std::vector<float> e(static_cast<size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
        e[static_cast<size_t>(i)] = static_cast<float>(std::sin(t * freq));
        e[static_cast<size_t>(half + i)] = static_cast<float>(std::cos(t * freq));
    }
    return e;
}

// --- ConvBlock ---

void ConvBlock::init(int cin, int cout, int k, int stride, int temb_dim, Rng& rng, bool with_gn) {
    conv.init(cin, cout, k, stride, rng);
    has_gn = with_gn;
    if (has_gn) gn.init(cout);
    has_temb = temb_dim > 0;
    if (has_temb) temb.init(temb_dim, cout, rng);
}

Tensor ConvBlock::forward(const Tensor& x, const std::vector<float>* temb_vec,
                          Cache* cache) const {
    Tensor h = conv.forward(x, cache ? &cache->padded_in : nullptr);
    if (has_gn) h = gn.forward(h, cache ? &cache->gn : nullptr);
    if (has_temb) {
        if (!temb_vec) throw std::invalid_argument("block expects a timestep embedding");
        add_channel_bias(h, temb.forward(*temb_vec));
    }
    if (cache) cache->pre_act = h;
    return lrelu(h);
}

Tensor ConvBlock::backward(const Cache& cache, const Tensor& dy,
                           const std::vector<float>* temb_vec, std::vector<float>* dtemb) {
    Tensor dh = lrelu_bwd(cache.pre_act, dy);
    if (has_temb) {
        const std::vector<float> dbias = channel_bias_grad(dh);
        const std::vector<float> de = temb.backward(*temb_vec, dbias);
        if (dtemb)
            for (size_t i = 0; i < de.size(); ++i) (*dtemb)[i] += de[i];
    }
    if (has_gn) dh = gn.backward(cache.gn, dh);
    return conv.backward(cache.padded_in, dh);
}

std::vector<Param*> ConvBlock::params() {
    std::vector<Param*> p = {&conv.w, &conv.b};
    if (has_gn) {
        p.push_back(&gn.gamma);
        p.push_back(&gn.beta);
    }
    if (has_temb) {
        p.push_back(&temb.w);
        p.push_back(&temb.b);
    }
    return p;
}

// --- UNet3d ---

void UNet3d::init(int in_ch_, int out_ch_, int base_, int levels_, int temb_dim_, bool zero_head,
                  float head_bias, Rng& rng) {
    in_ch = in_ch_;
    out_ch = out_ch_;
    base = base_;
    levels = levels_;
    temb_dim = temb_dim_;
    if (levels < 0) throw std::invalid_argument("levels must be >= 0");

    stem.init(in_ch, base, 3, 1, temb_dim, rng);
    down_a.resize(static_cast<size_t>(levels));
    down_b.resize(static_cast<size_t>(levels));
    int c = base;
    for (int l = 0; l < levels; ++l) {
        down_a[static_cast<size_t>(l)].init(c, 2 * c, 3, 2, temb_dim, rng);
        down_b[static_cast<size_t>(l)].init(2 * c, 2 * c, 3, 1, temb_dim, rng);
        c *= 2;
    }
    mid.init(c, c, 3, 1, temb_dim, rng);
    up_a.resize(static_cast<size_t>(levels));
    up_b.resize(static_cast<size_t>(levels));
    for (int l = levels - 1; l >= 0; --l) {
        const int skip_c = base << l;
        up_a[static_cast<size_t>(l)].init(2 * skip_c + skip_c, skip_c, 3, 1, temb_dim, rng);
        up_b[static_cast<size_t>(l)].init(skip_c, skip_c, 3, 1, temb_dim, rng);
    }
    head.init(base, out_ch, 3, 1, rng);
    if (zero_head) std::fill(head.w.val.begin(), head.w.val.end(), 0.0f);
    std::fill(head.b.val.begin(), head.b.val.end(), head_bias);
    if (temb_dim > 0) temb_mlp.init(temb_dim, temb_dim, rng);
}

Tensor UNet3d::forward(const Tensor& x, int t, Cache* cache) const {
    std::vector<float> emb;
    const std::vector<float>* embp = nullptr;
    std::vector<float> emb_raw;
    if (temb_dim > 0) {
        emb_raw = sinusoidal_embedding(t, temb_dim);
        emb = temb_mlp.forward(emb_raw);
        for (auto& e : emb) e = e > 0.0f ? e : kLReluSlope * e;
        embp = &emb;
    }

    std::vector<Tensor> feats;
    Tensor h = stem.forward(x, embp, cache ? &cache->stem : nullptr);
    if (cache) {
        cache->down_a.resize(static_cast<size_t>(levels));
        cache->down_b.resize(static_cast<size_t>(levels));
        cache->up_a.resize(static_cast<size_t>(levels));
        cache->up_b.resize(static_cast<size_t>(levels));
    }
    feats.push_back(h);
    for (int l = 0; l < levels; ++l) {
        h = down_a[static_cast<size_t>(l)].forward(h, embp, cache ? &cache->down_a[static_cast<size_t>(l)] : nullptr);
        h = down_b[static_cast<size_t>(l)].forward(h, embp, cache ? &cache->down_b[static_cast<size_t>(l)] : nullptr);
        feats.push_back(h);
    }
    h = mid.forward(h, embp, cache ? &cache->mid : nullptr);
    for (int l = levels - 1; l >= 0; --l) {
        h = upsample2(h);
        h = concat_ch(h, feats[static_cast<size_t>(l)]);
        h = up_a[static_cast<size_t>(l)].forward(h, embp, cache ? &cache->up_a[static_cast<size_t>(l)] : nullptr);
        h = up_b[static_cast<size_t>(l)].forward(h, embp, cache ? &cache->up_b[static_cast<size_t>(l)] : nullptr);
    }
    Tensor out = head.forward(h, cache ? &cache->head_in : nullptr);
    if (cache) {
        cache->feats = std::move(feats);
        cache->emb_raw = std::move(emb_raw);
        cache->emb = std::move(emb);
    }
    return out;
}

Tensor UNet3d::backward(const Cache& cache, const Tensor& dy) {
    std::vector<float> demb(static_cast<size_t>(temb_dim), 0.0f);
    std::vector<float>* dembp = temb_dim > 0 ? &demb : nullptr;
    const std::vector<float>* embp = temb_dim > 0 ? &cache.emb : nullptr;

    Tensor dh = head.backward(cache.head_in, dy);
    std::vector<Tensor> dskips(static_cast<size_t>(levels));
    for (int l = 0; l < levels; ++l) {
        dh = up_b[static_cast<size_t>(l)].backward(cache.up_b[static_cast<size_t>(l)], dh, embp, dembp);
        dh = up_a[static_cast<size_t>(l)].backward(cache.up_a[static_cast<size_t>(l)], dh, embp, dembp);
        const int up_c = 2 * (base << l);
        auto [dup, dskip] = split_ch(dh, up_c);
        dskips[static_cast<size_t>(l)] = std::move(dskip);
        dh = upsample2_bwd(dup);
    }
    dh = mid.backward(cache.mid, dh, embp, dembp);
    for (int l = levels - 1; l >= 0; --l) {
        if (l < levels - 1) {
            // gradient joining the skip path of the level above
            for (size_t i = 0; i < dh.v.size(); ++i)
                dh.v[i] += dskips[static_cast<size_t>(l + 1)].v[i];
        }
        dh = down_b[static_cast<size_t>(l)].backward(cache.down_b[static_cast<size_t>(l)], dh, embp, dembp);
        dh = down_a[static_cast<size_t>(l)].backward(cache.down_a[static_cast<size_t>(l)], dh, embp, dembp);
    }
    if (levels > 0)
        for (size_t i = 0; i < dh.v.size(); ++i) dh.v[i] += dskips[0].v[i];
    Tensor dx = stem.backward(cache.stem, dh, embp, dembp);

    if (temb_dim > 0) {
        // back through the embedding MLP's activation
        std::vector<float> pre = temb_mlp.forward(cache.emb_raw);
        for (size_t i = 0; i < demb.size(); ++i)
            demb[i] = pre[i] > 0.0f ? demb[i] : kLReluSlope * demb[i];
        temb_mlp.backward(cache.emb_raw, demb);
    }
    return dx;
}

std::vector<Param*> UNet3d::params() {
    std::vector<Param*> out;
    auto absorb = [&](std::vector<Param*> ps) {
        out.insert(out.end(), ps.begin(), ps.end());
    };
    absorb(stem.params());
    for (auto& blk : down_a) absorb(blk.params());
    for (auto& blk : down_b) absorb(blk.params());
    absorb(mid.params());
    for (auto& blk : up_a) absorb(blk.params());
    for (auto& blk : up_b) absorb(blk.params());
    absorb(head.params());
    if (temb_dim > 0) absorb(temb_mlp.params());
    return out;
}

// --- losses ---

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* dpred) {
    if (!pred.same_shape(target)) throw std::invalid_argument("loss shape mismatch");
    const double n = static_cast<double>(pred.numel());
    const double loss = ops().sq_diff(pred.v.data(), target.v.data(), pred.v.size()) / n;
    if (dpred) {
        *dpred = Tensor(pred.dims, pred.ch);
        const float scale = static_cast<float>(2.0 / n);
        for (size_t i = 0; i < pred.v.size(); ++i)
            dpred->v[i] = scale * (pred.v[i] - target.v[i]);
    }
    return loss;
}

double l1_loss(const Tensor& pred, const Tensor& target, Tensor* dpred) {
    if (!pred.same_shape(target)) throw std::invalid_argument("loss shape mismatch");
    const double n = static_cast<double>(pred.numel());
    const double loss = ops().l1_diff(pred.v.data(), target.v.data(), pred.v.size()) / n;
    if (dpred) {
        *dpred = Tensor(pred.dims, pred.ch);
        const float s = static_cast<float>(1.0 / n);
        for (size_t i = 0; i < pred.v.size(); ++i) {
            const float d = pred.v[i] - target.v[i];
            dpred->v[i] = d > 0.0f ? s : (d < 0.0f ? -s : 0.0f);
        }
    }
    return loss;
}

double bce_logits_loss(const Tensor& logits, const Tens<uint8_t>& target, Tensor* dlogits) {
    if (logits.ch != 1 || logits.dims != target.dims)
        throw std::invalid_argument("bce expects single-channel logits on the target grid");
    const double n = static_cast<double>(logits.numel());
    double loss = 0.0;
    if (dlogits) *dlogits = Tensor(logits.dims, 1);
    for (size_t i = 0; i < logits.v.size(); ++i) {
        const double x = logits.v[i];
        const double y = target.v[i] ? 1.0 : 0.0;
        loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x)));
        if (dlogits) {
            const double sig = 1.0 / (1.0 + std::exp(-x));
            dlogits->v[i] = static_cast<float>((sig - y) / n);
        }
    }
    return loss / n;
}

double softmax_ce_loss(const Tensor& logits, const Tens<uint8_t>& labels, Tensor* dlogits) {
    if (logits.dims != labels.dims)
        throw std::invalid_argument("softmax loss grid mismatch");
    const size_t sites = logits.sites();
    const int C = logits.ch;
    const double n = static_cast<double>(sites);
    double loss = 0.0;
    if (dlogits) *dlogits = Tensor(logits.dims, C);
    std::vector<double> p(static_cast<size_t>(C));
    for (size_t s = 0; s < sites; ++s) {
        const float* row = logits.v.data() + s * static_cast<size_t>(C);
        const uint8_t y = labels.v[s];
        if (y >= C) throw std::invalid_argument("label exceeds logit channels");
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            p[static_cast<size_t>(c)] = std::exp(row[c] - mx);
            z += p[static_cast<size_t>(c)];
        }
        loss += -(row[y] - mx - std::log(z));
        if (dlogits) {
            float* drow = dlogits->v.data() + s * static_cast<size_t>(C);
            for (int c = 0; c < C; ++c)
                drow[c] = static_cast<float>((p[static_cast<size_t>(c)] / z -
                                              (c == y ? 1.0 : 0.0)) /
                                             n);
        }
    }
    return loss / n;
}

size_t param_count(const std::vector<Param*>& params) {
    size_t n = 0;
    for (const Param* p : params) n += p->size();
    return n;
}

}  // namespace synbt::nn
