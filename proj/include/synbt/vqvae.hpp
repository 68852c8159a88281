#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "synbt/nn.hpp"
#include "synbt/rng.hpp"
#include "synbt/tensor.hpp"
#include "synbt/volume.hpp"

namespace synbt::vq {

// K learned code vectors of dimension d plus per-code usage counters.
struct Codebook {
    int K = 0, d = 0;
    nn::Param vectors;           // row-major K x d
    std::vector<int64_t> usage;  // incremented by quantize, one per assigned site

    void init(int K_, int d_, Rng& rng);
    void reset_usage();
    const float* row(int k) const { return vectors.val.data() + static_cast<size_t>(k) * d; }
};

struct QuantizeResult {
    Tensor zq;                    // per site an exact copy of the chosen code
    std::vector<int32_t> indices; // row-major over sites
};

// Nearest code per spatial site by squared L2; ties resolve to the lowest
// index. Increments c.usage.
QuantizeResult quantize(const Tensor& z, Codebook& c);

// Patch encoder: two stride-2 stages (4x spatial compression) with channel
// width doubling, then a linear latent head.
struct EncoderModel {
    int in_ch = 2, base = 8, d_code = 8;
    nn::ConvBlock b0, b1, b2, b3, b4;
    nn::Conv3d head;

    struct Cache {
        nn::ConvBlock::Cache c0, c1, c2, c3, c4;
        Tensor head_in;
    };

    void init(int in_ch_, int base_, int d_code_, Rng& rng);
    std::array<int, 3> latent_dims(const std::array<int, 3>& in) const;
    Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
    Tensor backward(const Cache& cache, const Tensor& dz);
    std::vector<nn::Param*> params();
};

// Inverts the encoder's shape map: two trilinear upsamplings back to input
// resolution, then a linear output head. Nothing is normalized and all coarse
// blocks past the first are pointwise, so per-voxel behavior transfers from
// patch training to whole-volume decoding; the deliberate exception is b0,
// whose 3^3 kernel sees zero padding at patch time but real neighbor codes at
// volume time -- the seam artifact stage-2 finetuning exists to remove.
struct DecoderModel {
    int out_ch = 2, base = 8, d_code = 8;
    nn::ConvBlock b0, b1, b2, b3, b4, b5;
    nn::Conv3d head;

    struct Cache {
        nn::ConvBlock::Cache c0, c1, c2, c3, c4, c5;
        Tensor head_in;
    };

    void init(int out_ch_, int base_, int d_code_, Rng& rng);
    Tensor forward(const Tensor& zq, Cache* cache = nullptr) const;
    Tensor backward(const Cache& cache, const Tensor& dy);
    std::vector<nn::Param*> params();
};

// Small patch discriminator: two stride-2 blocks and a linear score head
// producing a realness score map.
struct Discriminator {
    int in_ch = 2, width = 8;
    nn::ConvBlock b0, b1;
    nn::Conv3d head;

    struct Cache {
        nn::ConvBlock::Cache c0, c1;
        Tensor head_in;
    };

    void init(int in_ch_, int width_, Rng& rng);
    Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
    Tensor backward(const Cache& cache, const Tensor& dscores);
    std::vector<nn::Param*> params();
};

struct VqTrainConfig {
    std::array<int, 3> patch_size{8, 8, 8};
    int batch_size = 8;
    float lr_stage1 = 1e-4f;
    float lr_stage2 = 1e-5f;
    int steps_stage1 = 200;
    int steps_stage2 = 30;
    int disc_start_step = 200000;  // global step at which adversarial terms switch on
    float w_adv = 0.01f;
    float w_perc = 0.001f;
    float beta_commit = 0.25f;
    bool use_ema = false;  // reserved; only the straight-through estimator is implemented
    int codebook_size = 256;
    int code_dim = 8;
    int base_width = 8;
    int disc_width = 8;
    // Crop-sampled training has no natural epoch; dead codes are swept at this
    // fixed step interval instead.
    int reseed_every_steps = 50;
    uint64_t seed = 0;

    void validate() const;
};

struct VqLossParts {
    double recon_l1 = 0.0;
    double codebook = 0.0;  // mean squared gap, trains the codes
    double commit = 0.0;    // same gap, trains the encoder (weighted by beta)
    double adv = 0.0;       // generator hinge: -mean(scores)
    double perc = 0.0;
    double total = 0.0;
};

// total = L1 + codebook + beta*commit + w_adv*adv + w_perc*perc. disc_scores
// may be null (adversarial part 0). Perceptual part is skipped when w_perc=0.
VqLossParts vq_loss(const Tensor& x, const Tensor& x_hat, const Tensor& z, const Tensor& zq,
                    const Tensor* disc_scores, const VqTrainConfig& cfg);

// Mean absolute difference summed over a 3-level smoothed pyramid (full
// resolution plus two blur+2x-downsample stages). Dims must divide by 4.
double perceptual_l1(const Tensor& a, const Tensor& b);
Tensor perceptual_l1_grad(const Tensor& a, const Tensor& b);  // d perc / d a

struct VqModels {
    VqTrainConfig cfg;
    EncoderModel enc;
    DecoderModel dec;
    Codebook codebook;
    Discriminator disc;
    bool stage1_done = false;
    bool stage2_done = false;
};

struct VqTrainStats {
    std::vector<double> recon_l1;  // batch-mean reconstruction L1 per step
    std::vector<double> adv;       // generator-side adversarial component per step
    std::vector<double> total;
    int reseeded_codes = 0;
};

// Full training of encoder, decoder, codebook (and discriminator once
// disc_start_step is reached) on random sub-patches of the dataset volumes.
// Deterministic per cfg.seed. Throws NumericalFailureError on divergence.
VqModels train_stage1(const std::vector<Volume>& dataset, const VqTrainConfig& cfg,
                      VqTrainStats* stats = nullptr);

// Decoder-only finetuning on whole-volume reconstructions; encoder and
// codebook stay bitwise untouched. Requires stage-1 models.
void finetune_stage2(const std::vector<Volume>& dataset, VqModels& models,
                     VqTrainStats* stats = nullptr);

// Patch-wise encoding reassembled to a latent volume (spatial dims /4,
// channels code_dim). Pure; does not touch usage counters.
Tensor encode_volume(const Volume& v, const VqModels& models, std::array<int, 3> patch_size);

// encode -> quantize -> whole-volume decode; preserves shape and metadata.
Volume reconstruct_volume(const Volume& v, VqModels& models);

}  // namespace synbt::vq
