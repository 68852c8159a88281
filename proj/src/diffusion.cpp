#include "synbt/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "synbt/errors.hpp"
#include "synbt/filters.hpp"
#include "synbt/kernels.hpp"
#include "synbt/rng.hpp"

namespace synbt::diff {

using kern::ops;

// --- schedule ---

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("require 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    s.sqrt_alpha.resize(static_cast<size_t>(T));
    s.sqrt_beta.resize(static_cast<size_t>(T));
    s.sqrt_alpha_bar.resize(static_cast<size_t>(T));
    s.sqrt_one_minus_alpha_bar.resize(static_cast<size_t>(T));

    double abar = 1.0;
    float sabar = 1.0f;
    for (int t = 0; t < T; ++t) {
        const double b =
            T == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * static_cast<double>(t) / (T - 1);
        s.beta[static_cast<size_t>(t)] = b;
        s.alpha[static_cast<size_t>(t)] = 1.0 - b;
        abar *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = abar;
        s.sqrt_alpha[static_cast<size_t>(t)] = static_cast<float>(std::sqrt(1.0 - b));
        s.sqrt_beta[static_cast<size_t>(t)] = static_cast<float>(std::sqrt(b));
        // sequential float product so stepwise multiplication lands exactly on it
        sabar *= s.sqrt_alpha[static_cast<size_t>(t)];
        s.sqrt_alpha_bar[static_cast<size_t>(t)] = sabar;
        s.sqrt_one_minus_alpha_bar[static_cast<size_t>(t)] =
            static_cast<float>(std::sqrt(1.0 - abar));
    }
    return s;
}

namespace {

void check_t(int t, const NoiseSchedule& s) {
    if (t < 0 || t >= s.T) throw std::invalid_argument("timestep out of schedule range");
}

Tensor scaled_sum(const Tensor& a, float ca, const Tensor& b, float cb) {
    if (!a.same_shape(b)) throw std::invalid_argument("diffusion tensor shape mismatch");
    Tensor out(a.dims, a.ch);
    for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = ca * a.v[i] + cb * b.v[i];
    return out;
}

}  // namespace

Tensor forward_step(const Tensor& z_prev, int t, const Tensor& noise, const NoiseSchedule& s) {
    check_t(t, s);
    return scaled_sum(z_prev, s.sqrt_alpha[static_cast<size_t>(t)], noise,
                      s.sqrt_beta[static_cast<size_t>(t)]);
}

Tensor forward_to(const Tensor& z0, int t, const Tensor& noise, const NoiseSchedule& s) {
    check_t(t, s);
    return scaled_sum(z0, s.sqrt_alpha_bar[static_cast<size_t>(t)], noise,
                      s.sqrt_one_minus_alpha_bar[static_cast<size_t>(t)]);
}

Tensor reverse_step(const Tensor& z_t, int t, const Tensor& eps_pred, const Tensor* noise,
                    const NoiseSchedule& s) {
    check_t(t, s);
    if (!z_t.same_shape(eps_pred)) throw std::invalid_argument("eps prediction shape mismatch");
    if (noise && !z_t.same_shape(*noise)) throw std::invalid_argument("noise shape mismatch");

    const double inv_sa = 1.0 / std::sqrt(s.alpha[static_cast<size_t>(t)]);
    const double coef =
        s.beta[static_cast<size_t>(t)] / std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]);
    const double sb = std::sqrt(s.beta[static_cast<size_t>(t)]);
    const bool add_noise = t > 0 && noise != nullptr;

    Tensor out(z_t.dims, z_t.ch);
    for (size_t i = 0; i < out.v.size(); ++i) {
        double v = inv_sa * (static_cast<double>(z_t.v[i]) - coef * eps_pred.v[i]);
        if (add_noise) v += sb * (*noise).v[i];
        out.v[i] = static_cast<float>(v);
    }
    return out;
}

// --- conditioning ---

namespace {

// Chebyshev dilation: `rounds` sweeps of the 26-neighborhood.
Tens<uint8_t> dilate(const Tens<uint8_t>& m, int rounds) {
    Tens<uint8_t> cur = m;
    for (int r = 0; r < rounds; ++r) {
        Tens<uint8_t> next = cur;
        for (int x = 0; x < cur.dims[0]; ++x)
            for (int y = 0; y < cur.dims[1]; ++y)
                for (int z = 0; z < cur.dims[2]; ++z) {
                    if (cur.at(x, y, z, 0)) continue;
                    bool hit = false;
                    for (int dx = -1; dx <= 1 && !hit; ++dx)
                        for (int dy = -1; dy <= 1 && !hit; ++dy)
                            for (int dz = -1; dz <= 1 && !hit; ++dz) {
                                const int nx = x + dx, ny = y + dy, nz = z + dz;
                                if (nx < 0 || ny < 0 || nz < 0 || nx >= cur.dims[0] ||
                                    ny >= cur.dims[1] || nz >= cur.dims[2])
                                    continue;
                                if (cur.at(nx, ny, nz, 0)) hit = true;
                            }
                    if (hit) next.at(x, y, z, 0) = 1;
                }
        cur = next;
    }
    return cur;
}

void check_same_grid(const Volume& v, const MaskVolume& m) {
    v.validate();
    m.validate();
    if (m.data.dims != v.data.dims) throw std::invalid_argument("mask grid mismatch");
    if (m.kind != MaskKind::binary) throw std::invalid_argument("expected a binary mask");
}

}  // namespace

Volume mask_fill(const Volume& v, const MaskVolume& m) {
    check_same_grid(v, m);
    Volume out = v;
    if (count_nonzero(m.data) == 0) return out;

    // per-channel mean of the 3-voxel shell around the mask
    const Tens<uint8_t> shell_region = dilate(m.data, 3);
    std::vector<double> mean(static_cast<size_t>(v.data.ch), 0.0);
    size_t shell_n = 0;
    for (size_t s = 0; s < m.data.v.size(); ++s) {
        if (!shell_region.v[s] || m.data.v[s]) continue;
        ++shell_n;
        for (int c = 0; c < v.data.ch; ++c)
            mean[static_cast<size_t>(c)] += v.data.v[s * static_cast<size_t>(v.data.ch) +
                                                     static_cast<size_t>(c)];
    }
    if (shell_n == 0) {
        // mask covers (nearly) everything: fall back to the global channel mean
        std::fill(mean.begin(), mean.end(), 0.0);
        for (size_t s = 0; s < m.data.v.size(); ++s)
            for (int c = 0; c < v.data.ch; ++c)
                mean[static_cast<size_t>(c)] += v.data.v[s * static_cast<size_t>(v.data.ch) +
                                                         static_cast<size_t>(c)];
        for (double& x : mean) x /= static_cast<double>(m.data.v.size());
    } else {
        for (double& x : mean) x /= static_cast<double>(shell_n);
    }

    for (size_t s = 0; s < m.data.v.size(); ++s) {
        if (!m.data.v[s]) continue;
        for (int c = 0; c < v.data.ch; ++c)
            out.data.v[s * static_cast<size_t>(v.data.ch) + static_cast<size_t>(c)] =
                static_cast<float>(mean[static_cast<size_t>(c)]);
    }
    return out;
}

Condition build_condition(const Volume& v, const MaskVolume& m, const vq::VqModels& vqm) {
    check_same_grid(v, m);
    Condition cond;
    cond.z_masked = vq::encode_volume(mask_fill(v, m), vqm, vqm.cfg.patch_size);

    Tensor maskf(m.data.dims, 1);
    for (size_t i = 0; i < m.data.v.size(); ++i) maskf.v[i] = m.data.v[i] ? 1.0f : 0.0f;
    cond.mask_lowres = avg_pool(maskf, 4);
    return cond;
}

// --- denoiser ---

void DiffTrainConfig::validate() const {
    if (T < 1) throw std::invalid_argument("diffusion T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("require 0 < beta_start <= beta_end < 1");
    if (steps < 0) throw std::invalid_argument("negative step count");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(lr > 0.0f)) throw std::invalid_argument("learning rate must be positive");
    if (base_width < 1 || levels < 0 || temb_dim < 0)
        throw std::invalid_argument("bad denoiser architecture constants");
}

Tensor DenoiserModel::predict(const Tensor& z_t, int t, const Condition& cond) const {
    Tensor x = nn::concat_ch(z_t, cond.z_masked);
    x = nn::concat_ch(x, cond.mask_lowres);
    return unet.forward(x, t, nullptr);
}

DenoiserModel train_denoiser(const std::vector<Volume>& volumes,
                             const std::vector<MaskVolume>& masks, const vq::VqModels& vqm,
                             const NoiseSchedule& s, const DiffTrainConfig& cfg,
                             DiffTrainStats* stats) {
    cfg.validate();
    if (s.T != cfg.T) throw std::invalid_argument("schedule length disagrees with the config");
    if (volumes.empty() || volumes.size() != masks.size())
        throw std::invalid_argument("need matching non-empty volume/mask lists");
    if (!vqm.stage1_done)
        throw InvalidStateError("denoiser training requires a trained autoencoder");

    Rng rng(Rng::derive(cfg.seed, "diffusion-train"));
    const int d = vqm.cfg.code_dim;

    DenoiserModel den;
    den.cfg = cfg;
    den.d_code = d;
    den.unet.init(2 * d + 1, d, cfg.base_width, cfg.levels, cfg.temb_dim,
                  /*zero_head=*/true, 0.0f, rng);

    // Latents and conditions are fixed by the frozen autoencoder; compute once.
    std::vector<Tensor> z0s;
    std::vector<Condition> conds;
    double sum = 0.0, sumsq = 0.0;
    size_t n = 0;
    for (const Volume& v : volumes) {
        z0s.push_back(vq::encode_volume(v, vqm, vqm.cfg.patch_size));
        for (float x : z0s.back().v) {
            sum += x;
            sumsq += static_cast<double>(x) * x;
        }
        n += z0s.back().v.size();
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
    den.latent_scale = var > 0.0 ? static_cast<float>(1.0 / std::sqrt(var)) : 1.0f;
    for (Tensor& z : z0s) ops().scale(den.latent_scale, z.v.data(), z.v.size());
    for (size_t i = 0; i < volumes.size(); ++i) {
        conds.push_back(build_condition(volumes[i], masks[i], vqm));
        ops().scale(den.latent_scale, conds.back().z_masked.v.data(),
                    conds.back().z_masked.v.size());
    }

    nn::Adam opt;
    opt.lr = cfg.lr;
    std::vector<nn::Param*> params = den.unet.params();

    for (int step = 0; step < cfg.steps; ++step) {
        nn::zero_grads(params);
        double step_mse = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t idx = static_cast<size_t>(rng.randint(static_cast<int64_t>(z0s.size())));
            const int t = static_cast<int>(rng.randint(s.T));
            Tensor eps(z0s[idx].dims, z0s[idx].ch);
            for (float& x : eps.v) x = static_cast<float>(rng.normal());

            const Tensor z_t = forward_to(z0s[idx], t, eps, s);
            Tensor x = nn::concat_ch(z_t, conds[idx].z_masked);
            x = nn::concat_ch(x, conds[idx].mask_lowres);

            nn::UNet3d::Cache cache;
            const Tensor pred = den.unet.forward(x, t, &cache);
            Tensor dpred;
            const double mse = nn::mse_loss(pred, eps, &dpred);
            if (!std::isfinite(mse))
                throw NumericalFailureError("denoiser loss diverged at step " +
                                            std::to_string(step));
            den.unet.backward(cache, dpred);
            step_mse += mse;
        }
        const float inv_b = 1.0f / static_cast<float>(cfg.batch_size);
        for (nn::Param* p : params) ops().scale(inv_b, p->grad.data(), p->grad.size());
        opt.update(params);
        if (stats) stats->mse.push_back(step_mse * inv_b);
    }

    den.trained = true;
    return den;
}

// --- DDIM ---

std::vector<int> ddim_timesteps(int T, int num_steps) {
    if (num_steps < 1 || num_steps > T)
        throw std::invalid_argument("DDIM step count must lie in [1, T]");
    std::vector<int> ts(static_cast<size_t>(num_steps));
    if (num_steps == 1) {
        ts[0] = T - 1;
        return ts;
    }
    for (int k = 0; k < num_steps; ++k) {
        const double pos =
            (T - 1) - static_cast<double>(T - 1) * k / static_cast<double>(num_steps - 1);
        ts[static_cast<size_t>(k)] = static_cast<int>(std::lround(pos));
    }
    return ts;
}

std::vector<double> ddim_invert_z0(const std::vector<double>& z_t, int t,
                                   const std::vector<double>& eps, const NoiseSchedule& s) {
    check_t(t, s);
    if (z_t.size() != eps.size()) throw std::invalid_argument("eps size mismatch");
    const double abar = s.alpha_bar[static_cast<size_t>(t)];
    const double sab = std::sqrt(abar);
    const double somab = std::sqrt(1.0 - abar);
    std::vector<double> z0(z_t.size());
    for (size_t i = 0; i < z_t.size(); ++i) z0[i] = (z_t[i] - somab * eps[i]) / sab;
    return z0;
}

Tensor ddim_sample(const EpsPredictor& eps, const Condition& cond, const NoiseSchedule& s,
                   std::array<int, 3> latent_dims, int latent_ch, int num_steps, double eta,
                   uint64_t seed) {
    const std::vector<int> ts = ddim_timesteps(s.T, num_steps);
    Rng rng(Rng::derive(seed, "ddim-init"));

    std::vector<double> z(Tensor(latent_dims, latent_ch).v.size());
    for (double& x : z) x = rng.normal();

    Tensor zf(latent_dims, latent_ch);
    std::vector<double> pred_d(z.size());
    for (size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        for (size_t i = 0; i < z.size(); ++i) zf.v[i] = static_cast<float>(z[i]);
        const Tensor pred = eps(zf, t, cond);
        if (!pred.same_shape(zf)) throw std::invalid_argument("eps predictor shape mismatch");
        for (size_t i = 0; i < z.size(); ++i) pred_d[i] = pred.v[i];

        const std::vector<double> z0 = ddim_invert_z0(z, t, pred_d, s);
        if (k + 1 == ts.size()) {
            for (size_t i = 0; i < z.size(); ++i) zf.v[i] = static_cast<float>(z0[i]);
            return zf;
        }

        const int tn = ts[k + 1];
        const double ab_t = s.alpha_bar[static_cast<size_t>(t)];
        const double ab_n = s.alpha_bar[static_cast<size_t>(tn)];
        const double sigma =
            eta * std::sqrt((1.0 - ab_n) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_n);
        const double dir = std::sqrt(std::max(0.0, 1.0 - ab_n - sigma * sigma));
        const double sab_n = std::sqrt(ab_n);
        for (size_t i = 0; i < z.size(); ++i) {
            z[i] = sab_n * z0[i] + dir * pred_d[i];
            if (sigma > 0.0) z[i] += sigma * rng.normal();
        }
    }
    return zf;  // unreachable; ts is never empty
}

// --- inpainting ---

Volume inpaint(const Volume& v, const MaskVolume& m, vq::VqModels& vqm,
               const DenoiserModel& den, const NoiseSchedule& s, uint64_t seed, int num_steps,
               double eta) {
    check_same_grid(v, m);
    if (count_nonzero(m.data) == 0)
        throw std::invalid_argument("inpaint mask is empty: nothing to synthesize");

    Condition cond = build_condition(v, m, vqm);
    ops().scale(den.latent_scale, cond.z_masked.v.data(), cond.z_masked.v.size());

    const std::array<int, 3> latent_dims = cond.z_masked.dims;
    Tensor lat = ddim_sample([&den](const Tensor& z_t, int t, const Condition& c) {
                                 return den.predict(z_t, t, c);
                             },
                             cond, s, latent_dims, den.d_code, num_steps, eta,
                             Rng::derive(seed, "inpaint"));
    const double inv_scale = 1.0 / static_cast<double>(den.latent_scale);
    for (float& x : lat.v) x = static_cast<float>(x * inv_scale);

    const vq::QuantizeResult q = vq::quantize(lat, vqm.codebook);
    const Tensor decoded = vqm.dec.forward(q.zq);

    // 2-voxel dilated linear blend; weights 1, 2/3, 1/3, then untouched copy
    const Tens<uint8_t> ring1 = dilate(m.data, 1);
    const Tens<uint8_t> ring2 = dilate(ring1, 1);
    Volume out = v;
    for (size_t sidx = 0; sidx < m.data.v.size(); ++sidx) {
        float w = 0.0f;
        if (m.data.v[sidx]) w = 1.0f;
        else if (ring1.v[sidx]) w = 2.0f / 3.0f;
        else if (ring2.v[sidx]) w = 1.0f / 3.0f;
        if (w == 0.0f) continue;  // outside the margin the input bytes survive as-is
        for (int c = 0; c < v.data.ch; ++c) {
            const size_t i = sidx * static_cast<size_t>(v.data.ch) + static_cast<size_t>(c);
            out.data.v[i] = w * decoded.v[i] + (1.0f - w) * v.data.v[i];
        }
    }
    return out;
}

}  // namespace synbt::diff
