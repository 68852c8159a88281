#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "synbt/nn.hpp"
#include "synbt/tensor.hpp"
#include "synbt/volume.hpp"
#include "synbt/vqvae.hpp"

namespace synbt::diff {

// Linear variance schedule with precomputed retention tables. beta/alpha/
// alpha_bar are double so the cumulative-product invariant holds to 1e-12.
// sqrt_alpha and sqrt_alpha_bar are float, and sqrt_alpha_bar is the
// *sequential* float product of sqrt_alpha[0..t]: multiplying a tensor by the
// factors one step at a time then lands bit-identically on the closed-form
// jump whenever the input survives each rounding (e.g. power-of-two values),
// which is what makes the zero-noise composition contract exact.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta, alpha, alpha_bar;
    std::vector<float> sqrt_alpha, sqrt_beta;
    std::vector<float> sqrt_alpha_bar, sqrt_one_minus_alpha_bar;
};

NoiseSchedule make_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

// One forward diffusion step: z_t = sqrt(1-beta_t) z_prev + sqrt(beta_t) noise.
Tensor forward_step(const Tensor& z_prev, int t, const Tensor& noise, const NoiseSchedule& s);

// Closed-form jump to step t: z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) noise.
Tensor forward_to(const Tensor& z0, int t, const Tensor& noise, const NoiseSchedule& s);

// One ancestral reverse step (computed in double):
// z_prev = (z_t - beta_t/sqrt(1-abar_t) eps) / sqrt(alpha_t) + sqrt(beta_t) n.
// At t = 0 the noise term is suppressed regardless of `noise`.
Tensor reverse_step(const Tensor& z_t, int t, const Tensor& eps_pred, const Tensor* noise,
                    const NoiseSchedule& s);

// Conditioning pair fed to the denoiser: latents of the volume with the tumor
// region replaced by shell-mean tissue, plus the mask average-pooled to latent
// resolution (soft occupancy in [0,1]).
struct Condition {
    Tensor z_masked;
    Tensor mask_lowres;  // single channel, latent-resolution
};

// Replaces mask voxels with the per-channel mean of a 3-voxel shell around the
// mask (global mean when the mask leaves no shell), encodes the result, and
// average-pools the mask by the compression rate.
Condition build_condition(const Volume& v, const MaskVolume& m, const vq::VqModels& vqm);

// The volume fed through the encoder with mask voxels replaced; exposed so
// tests can check the masking rule directly.
Volume mask_fill(const Volume& v, const MaskVolume& m);

// Epsilon predictor: (z_t, t, cond) -> noise estimate. Production wraps the
// trained U-Net; tests inject oracles.
using EpsPredictor = std::function<Tensor(const Tensor&, int, const Condition&)>;

struct DiffTrainConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int steps = 300;
    int batch_size = 4;
    float lr = 1e-4f;
    int base_width = 16;
    int levels = 2;
    int temb_dim = 64;
    uint64_t seed = 0;

    void validate() const;
};

// Trained eps-model: U-Net over [z_t | z_masked | mask_lowres] channels with a
// sinusoidal timestep embedding, plus the latent normalization scale
// (1/std of training latents) applied before diffusion math.
struct DenoiserModel {
    DiffTrainConfig cfg;
    int d_code = 8;
    nn::UNet3d unet;
    float latent_scale = 1.0f;
    bool trained = false;

    Tensor predict(const Tensor& z_t, int t, const Condition& cond) const;
};

struct DiffTrainStats {
    std::vector<double> mse;  // batch-mean eps MSE per step
};

// Trains the denoiser on (tumor volume, tumor mask) pairs routed through the
// frozen VQ-VAE encoder. Deterministic per cfg.seed; throws
// NumericalFailureError on divergence.
DenoiserModel train_denoiser(const std::vector<Volume>& volumes,
                             const std::vector<MaskVolume>& masks, const vq::VqModels& vqm,
                             const NoiseSchedule& s, const DiffTrainConfig& cfg,
                             DiffTrainStats* stats = nullptr);

// Core DDIM inversion, all in double: z0_hat = (z_t - sqrt(1-abar_t) eps) /
// sqrt(abar_t). The sampler keeps its state in double and goes through float
// only at the predictor boundary, so an oracle eps recovers z0 to double
// precision.
std::vector<double> ddim_invert_z0(const std::vector<double>& z_t, int t,
                                   const std::vector<double>& eps, const NoiseSchedule& s);

// Evenly spaced descending timestep subsequence T-1 .. 0 used by ddim_sample.
std::vector<int> ddim_timesteps(int T, int num_steps);

// Deterministic DDIM sampler over an evenly spaced descending timestep
// subsequence; eta=0 is fully deterministic given the seed. The last step
// returns the predicted z0.
Tensor ddim_sample(const EpsPredictor& eps, const Condition& cond, const NoiseSchedule& s,
                   std::array<int, 3> latent_dims, int latent_ch, int num_steps, double eta,
                   uint64_t seed);

// Mask-conditioned synthesis: DDIM in latent space, quantize, decode, then
// composite into v with a 2-voxel dilated linear blend; voxels beyond the
// margin are copied from v bit-exactly. Throws on an empty mask.
Volume inpaint(const Volume& v, const MaskVolume& m, vq::VqModels& vqm,
               const DenoiserModel& den, const NoiseSchedule& s, uint64_t seed,
               int num_steps = 10, double eta = 0.0);

}  // namespace synbt::diff
