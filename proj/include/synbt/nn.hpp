#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "synbt/rng.hpp"
#include "synbt/tensor.hpp"

namespace synbt::nn {

inline constexpr float kLReluSlope = 0.1f;

struct Param {
    std::vector<float> val, grad, m, v;

    void resize(size_t n) {
        val.assign(n, 0.0f);
        grad.assign(n, 0.0f);
        m.assign(n, 0.0f);
        v.assign(n, 0.0f);
    }
    size_t size() const { return val.size(); }
};

void he_init(Param& p, size_t n, size_t fan_in, Rng& rng);
void zero_grads(const std::vector<Param*>& params);

// Adam with bias-corrected step size lr_t = lr * sqrt(1-b2^t) / (1-b1^t).
struct Adam {
    float lr = 1e-4f;
    float b1 = 0.9f;
    float b2 = 0.999f;
    float eps = 1e-8f;
    int64_t step = 0;

    void update(const std::vector<Param*>& params);
};

// 3-D convolution, kernel 1 or 3, stride 1 or 2, zero padding k/2. Weight
// layout [tap][cin][cout] as the compute kernels expect. backward accumulates
// into w.grad/b.grad and returns the input gradient.
struct Conv3d {
    int cin = 0, cout = 0, k = 3, stride = 1;
    Param w, b;

    void init(int cin_, int cout_, int k_, int stride_, Rng& rng);
    std::array<int, 3> out_dims(const std::array<int, 3>& in) const;
    Tensor forward(const Tensor& x, Tensor* padded_cache = nullptr) const;
    Tensor backward(const Tensor& padded_in, const Tensor& dy);
    std::vector<Param*> params();
};

// Group normalization over (sites x group-channels); groups = largest divisor
// of C that is <= 8. Per-channel affine.
struct GroupNorm {
    int channels = 0, groups = 1;
    Param gamma, beta;

    struct Cache {
        Tensor xhat;
        std::vector<double> inv_std;  // per group
    };

    void init(int channels_);
    Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
    Tensor backward(const Cache& cache, const Tensor& dy);
    std::vector<Param*> params();
};

Tensor lrelu(const Tensor& x);
Tensor lrelu_bwd(const Tensor& x, const Tensor& dy);

Tensor upsample2(const Tensor& x);
Tensor upsample2_bwd(const Tensor& dy);

// Trilinear x2 with half-voxel alignment and replicated edges; smooth variant
// for decoders where nearest-neighbor blocks would leave grid artifacts.
Tensor upsample2_linear(const Tensor& x);
Tensor upsample2_linear_bwd(const Tensor& dy);

// Dense layer on flat vectors (time-embedding MLP); weight layout [cin][cout].
struct Linear {
    int cin = 0, cout = 0;
    Param w, b;

    void init(int cin_, int cout_, Rng& rng);
    std::vector<float> forward(const std::vector<float>& x) const;
    std::vector<float> backward(const std::vector<float>& x, const std::vector<float>& dy);
    std::vector<Param*> params();
};

Tensor concat_ch(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_ch(const Tensor& x, int ca);
void add_channel_bias(Tensor& x, const std::vector<float>& bias);
std::vector<float> channel_bias_grad(const Tensor& dy);

// Half sine / half cosine positional features of an integer timestep.
std::vector<float> sinusoidal_embedding(int t, int dim, double max_period = 10000.0);

// conv -> groupnorm -> (+ timestep bias) -> leaky relu. Normalization can be
// disabled (with_gn=false) for stacks that must behave identically on patch
// and whole-volume inputs, since groupnorm statistics depend on the input
// extent.
struct ConvBlock {
    Conv3d conv;
    GroupNorm gn;
    Linear temb;
    bool has_temb = false;
    bool has_gn = true;

    struct Cache {
        Tensor padded_in;
        GroupNorm::Cache gn;
        Tensor pre_act;
    };

    void init(int cin, int cout, int k, int stride, int temb_dim, Rng& rng, bool with_gn = true);
    Tensor forward(const Tensor& x, const std::vector<float>* temb_vec, Cache* cache) const;
    // dtemb, when non-null, receives += the gradient w.r.t. the embedding
    Tensor backward(const Cache& cache, const Tensor& dy, const std::vector<float>* temb_vec,
                    std::vector<float>* dtemb);
    std::vector<Param*> params();
};

// Symmetric encoder/decoder with skip connections. `levels` stride-2 stages,
// channel width doubling per stage. When temb_dim > 0 every block receives a
// learned per-channel bias from the shared embedding MLP.
struct UNet3d {
    int in_ch = 0, out_ch = 0, base = 8, levels = 1, temb_dim = 0;
    ConvBlock stem;
    std::vector<ConvBlock> down_a, down_b;
    ConvBlock mid;
    std::vector<ConvBlock> up_a, up_b;
    Conv3d head;
    Linear temb_mlp;

    struct Cache {
        ConvBlock::Cache stem;
        std::vector<ConvBlock::Cache> down_a, down_b;
        ConvBlock::Cache mid;
        std::vector<ConvBlock::Cache> up_a, up_b;
        std::vector<Tensor> feats;       // skip tensors (needed for concat split sizes)
        Tensor head_in;                  // padded input of head conv
        std::vector<float> emb_raw, emb; // MLP input and activated output
    };

    void init(int in_ch_, int out_ch_, int base_, int levels_, int temb_dim_, bool zero_head,
              float head_bias, Rng& rng);
    Tensor forward(const Tensor& x, int t, Cache* cache) const;
    Tensor backward(const Cache& cache, const Tensor& dy);
    std::vector<Param*> params();
};

// --- losses (reductions in double; gradient tensors use mean reduction) ---

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* dpred = nullptr);
double l1_loss(const Tensor& pred, const Tensor& target, Tensor* dpred = nullptr);
// independent Bernoulli per site; logits C=1, target binary
double bce_logits_loss(const Tensor& logits, const Tens<uint8_t>& target,
                       Tensor* dlogits = nullptr);
// per-site softmax cross-entropy; labels must be < logits.ch
double softmax_ce_loss(const Tensor& logits, const Tens<uint8_t>& labels,
                       Tensor* dlogits = nullptr);

size_t param_count(const std::vector<Param*>& params);

}  // namespace synbt::nn
