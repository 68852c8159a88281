#include "synbt/vqvae.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "synbt/errors.hpp"
#include "synbt/filters.hpp"
#include "synbt/kernels.hpp"

namespace synbt::vq {

using kern::ops;

// --- Codebook / quantize ---

void Codebook::init(int K_, int d_, Rng& rng) {
    if (K_ < 2 || d_ < 1) throw std::invalid_argument("codebook needs K >= 2 and d >= 1");
    K = K_;
    d = d_;
    vectors.resize(static_cast<size_t>(K) * static_cast<size_t>(d));
    for (auto& x : vectors.val) x = 0.5f * static_cast<float>(rng.normal());
    usage.assign(static_cast<size_t>(K), 0);
}

void Codebook::reset_usage() { std::fill(usage.begin(), usage.end(), 0); }

QuantizeResult quantize(const Tensor& z, Codebook& c) {
    if (c.K < 2 || c.d < 1) throw std::invalid_argument("codebook not initialized");
    if (z.ch != c.d) throw std::invalid_argument("latent channels must match code dimension");
    QuantizeResult out;
    const size_t sites = z.sites();
    out.indices.resize(sites);
    ops().nearest_codes(z.v.data(), sites, c.vectors.val.data(), c.K, c.d, out.indices.data());
    out.zq = Tensor(z.dims, z.ch);
    for (size_t s = 0; s < sites; ++s) {
        const float* r = c.row(out.indices[s]);
        std::copy(r, r + c.d, out.zq.v.data() + s * static_cast<size_t>(c.d));
        ++c.usage[static_cast<size_t>(out.indices[s])];
    }
    return out;
}

// --- Encoder ---

void EncoderModel::init(int in_ch_, int base_, int d_code_, Rng& rng) {
    in_ch = in_ch_;
    base = base_;
    d_code = d_code_;
    b0.init(in_ch, base, 3, 1, 0, rng);
    b1.init(base, 2 * base, 3, 2, 0, rng);
    b2.init(2 * base, 2 * base, 3, 1, 0, rng);
    b3.init(2 * base, 4 * base, 3, 2, 0, rng);
    b4.init(4 * base, 4 * base, 3, 1, 0, rng);
    head.init(4 * base, d_code, 3, 1, rng);
}

std::array<int, 3> EncoderModel::latent_dims(const std::array<int, 3>& in) const {
    for (int a = 0; a < 3; ++a)
        if (in[a] < 4 || in[a] % 4 != 0)
            throw std::invalid_argument("encoder input dims must be positive multiples of 4");
    return {in[0] / 4, in[1] / 4, in[2] / 4};
}

Tensor EncoderModel::forward(const Tensor& x, Cache* cache) const {
    latent_dims(x.dims);  // shape guard
    Tensor h = b0.forward(x, nullptr, cache ? &cache->c0 : nullptr);
    h = b1.forward(h, nullptr, cache ? &cache->c1 : nullptr);
    h = b2.forward(h, nullptr, cache ? &cache->c2 : nullptr);
    h = b3.forward(h, nullptr, cache ? &cache->c3 : nullptr);
    h = b4.forward(h, nullptr, cache ? &cache->c4 : nullptr);
    return head.forward(h, cache ? &cache->head_in : nullptr);
}

Tensor EncoderModel::backward(const Cache& cache, const Tensor& dz) {
    Tensor dh = head.backward(cache.head_in, dz);
    dh = b4.backward(cache.c4, dh, nullptr, nullptr);
    dh = b3.backward(cache.c3, dh, nullptr, nullptr);
    dh = b2.backward(cache.c2, dh, nullptr, nullptr);
    dh = b1.backward(cache.c1, dh, nullptr, nullptr);
    return b0.backward(cache.c0, dh, nullptr, nullptr);
}

std::vector<nn::Param*> EncoderModel::params() {
    std::vector<nn::Param*> out;
    for (nn::ConvBlock* b : {&b0, &b1, &b2, &b3, &b4}) {
        auto ps = b->params();
        out.insert(out.end(), ps.begin(), ps.end());
    }
    out.push_back(&head.w);
    out.push_back(&head.b);
    return out;
}

// --- Decoder ---

void DecoderModel::init(int out_ch_, int base_, int d_code_, Rng& rng) {
    out_ch = out_ch_;
    base = base_;
    d_code = d_code_;
    // The decoder trains on small patches but must decode whole volumes, so it
    // avoids anything whose per-voxel output depends on the overall input
    // extent: no normalization (instance statistics shift between patch and
    // volume inputs) and spatial mixing only where its patch/volume mismatch
    // stays benign. The one deliberate exception is b0: its 3^3 kernel reads
    // latent neighbors that are zero padding at patch time but real codes at
    // volume time, which is what produces the per-patch seams that stage-2
    // whole-volume finetuning then removes.
    b0.init(d_code, 4 * base, 3, 1, 0, rng, false);
    b1.init(4 * base, 4 * base, 1, 1, 0, rng, false);
    b2.init(4 * base, 2 * base, 1, 1, 0, rng, false);
    b3.init(2 * base, 2 * base, 1, 1, 0, rng, false);
    b4.init(2 * base, base, 3, 1, 0, rng, false);
    b5.init(base, base, 3, 1, 0, rng, false);
    head.init(base, out_ch, 3, 1, rng);
}

Tensor DecoderModel::forward(const Tensor& zq, Cache* cache) const {
    Tensor h = b0.forward(zq, nullptr, cache ? &cache->c0 : nullptr);
    h = b1.forward(h, nullptr, cache ? &cache->c1 : nullptr);
    h = nn::upsample2_linear(h);
    h = b2.forward(h, nullptr, cache ? &cache->c2 : nullptr);
    h = b3.forward(h, nullptr, cache ? &cache->c3 : nullptr);
    h = nn::upsample2_linear(h);
    h = b4.forward(h, nullptr, cache ? &cache->c4 : nullptr);
    h = b5.forward(h, nullptr, cache ? &cache->c5 : nullptr);
    return head.forward(h, cache ? &cache->head_in : nullptr);
}

Tensor DecoderModel::backward(const Cache& cache, const Tensor& dy) {
    Tensor dh = head.backward(cache.head_in, dy);
    dh = b5.backward(cache.c5, dh, nullptr, nullptr);
    dh = b4.backward(cache.c4, dh, nullptr, nullptr);
    dh = nn::upsample2_linear_bwd(dh);
    dh = b3.backward(cache.c3, dh, nullptr, nullptr);
    dh = b2.backward(cache.c2, dh, nullptr, nullptr);
    dh = nn::upsample2_linear_bwd(dh);
    dh = b1.backward(cache.c1, dh, nullptr, nullptr);
    return b0.backward(cache.c0, dh, nullptr, nullptr);
}

std::vector<nn::Param*> DecoderModel::params() {
    std::vector<nn::Param*> out;
    for (nn::ConvBlock* b : {&b0, &b1, &b2, &b3, &b4, &b5}) {
        auto ps = b->params();
        out.insert(out.end(), ps.begin(), ps.end());
    }
    out.push_back(&head.w);
    out.push_back(&head.b);
    return out;
}

// --- Discriminator ---

void Discriminator::init(int in_ch_, int width_, Rng& rng) {
    in_ch = in_ch_;
    width = width_;
    b0.init(in_ch, width, 3, 2, 0, rng);
    b1.init(width, 2 * width, 3, 2, 0, rng);
    head.init(2 * width, 1, 3, 1, rng);
}

Tensor Discriminator::forward(const Tensor& x, Cache* cache) const {
    Tensor h = b0.forward(x, nullptr, cache ? &cache->c0 : nullptr);
    h = b1.forward(h, nullptr, cache ? &cache->c1 : nullptr);
    return head.forward(h, cache ? &cache->head_in : nullptr);
}

Tensor Discriminator::backward(const Cache& cache, const Tensor& dscores) {
    Tensor dh = head.backward(cache.head_in, dscores);
    dh = b1.backward(cache.c1, dh, nullptr, nullptr);
    return b0.backward(cache.c0, dh, nullptr, nullptr);
}

std::vector<nn::Param*> Discriminator::params() {
    std::vector<nn::Param*> out;
    for (nn::ConvBlock* b : {&b0, &b1}) {
        auto ps = b->params();
        out.insert(out.end(), ps.begin(), ps.end());
    }
    out.push_back(&head.w);
    out.push_back(&head.b);
    return out;
}

// --- Config / loss ---

void VqTrainConfig::validate() const {
    for (int a = 0; a < 3; ++a)
        if (patch_size[a] < 4 || patch_size[a] % 4 != 0)
            throw std::invalid_argument("patch dims must be positive multiples of 4");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (steps_stage1 < 0 || steps_stage2 < 0) throw std::invalid_argument("step counts must be >= 0");
    if (!(lr_stage1 > 0.0f) || !(lr_stage2 > 0.0f)) throw std::invalid_argument("learning rates must be positive");
    if (disc_start_step < 0) throw std::invalid_argument("disc_start_step must be >= 0");
    if (w_adv < 0.0f || w_perc < 0.0f || beta_commit < 0.0f)
        throw std::invalid_argument("loss weights must be >= 0");
    if (use_ema) throw std::invalid_argument("EMA codebook updates are reserved but not implemented");
    if (codebook_size < 2 || code_dim < 1) throw std::invalid_argument("codebook needs K >= 2, d >= 1");
    if (base_width < 1 || disc_width < 1) throw std::invalid_argument("widths must be >= 1");
    if (reseed_every_steps < 1) throw std::invalid_argument("reseed interval must be >= 1");
}

VqLossParts vq_loss(const Tensor& x, const Tensor& x_hat, const Tensor& z, const Tensor& zq,
                    const Tensor* disc_scores, const VqTrainConfig& cfg) {
    if (!x.same_shape(x_hat)) throw std::invalid_argument("reconstruction shape mismatch");
    if (!z.same_shape(zq)) throw std::invalid_argument("latent shape mismatch");
    VqLossParts p;
    p.recon_l1 = ops().l1_diff(x.v.data(), x_hat.v.data(), x.v.size()) /
                 static_cast<double>(x.numel());
    // the stop-gradient split only affects gradient routing; both terms share
    // the same numeric value
    const double gap = ops().sq_diff(z.v.data(), zq.v.data(), z.v.size()) /
                       static_cast<double>(z.numel());
    p.codebook = gap;
    p.commit = gap;
    if (disc_scores)
        p.adv = -ops().sum(disc_scores->v.data(), disc_scores->v.size()) /
                static_cast<double>(disc_scores->numel());
    if (cfg.w_perc > 0.0f) p.perc = perceptual_l1(x, x_hat);
    p.total = p.recon_l1 + p.codebook + cfg.beta_commit * p.commit + cfg.w_adv * p.adv +
              cfg.w_perc * p.perc;
    return p;
}

namespace {

std::vector<Tensor> pyramid3(const Tensor& t) {
    std::vector<Tensor> levels;
    levels.push_back(t);
    for (int s = 0; s < 2; ++s) levels.push_back(avg_pool(blur3(levels.back()), 2));
    return levels;
}

}  // namespace

double perceptual_l1(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("perceptual loss shape mismatch");
    const std::vector<Tensor> pa = pyramid3(a), pb = pyramid3(b);
    double total = 0.0;
    for (size_t s = 0; s < pa.size(); ++s)
        total += ops().l1_diff(pa[s].v.data(), pb[s].v.data(), pa[s].v.size()) /
                 static_cast<double>(pa[s].numel());
    return total;
}

Tensor perceptual_l1_grad(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("perceptual loss shape mismatch");
    const std::vector<Tensor> pa = pyramid3(a), pb = pyramid3(b);
    Tensor g(a.dims, a.ch);
    for (size_t s = 0; s < pa.size(); ++s) {
        Tensor d(pa[s].dims, pa[s].ch);
        const float inv = 1.0f / static_cast<float>(pa[s].numel());
        for (size_t i = 0; i < d.v.size(); ++i) {
            const float diff = pa[s].v[i] - pb[s].v[i];
            d.v[i] = diff > 0.0f ? inv : (diff < 0.0f ? -inv : 0.0f);
        }
        // chain the level back up: pooling adjoint spreads /8, blur is
        // self-adjoint under zero padding
        for (size_t t = s; t > 0; --t) {
            Tensor up = upsample_nearest(d, 2);
            ops().scale(0.125f, up.v.data(), up.v.size());
            d = blur3(up);
        }
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += d.v[i];
    }
    return g;
}

// --- training ---

namespace {

Tensor random_patch(const Tensor& t, const std::array<int, 3>& size, Rng& rng) {
    std::array<int, 3> orig;
    for (int a = 0; a < 3; ++a)
        orig[a] = static_cast<int>(rng.randint(static_cast<int64_t>(t.dims[a] - size[a] + 1)));
    Tensor out(size, t.ch);
    for (int i = 0; i < size[0]; ++i)
        for (int j = 0; j < size[1]; ++j)
            for (int k = 0; k < size[2]; ++k)
                for (int c = 0; c < t.ch; ++c)
                    out.at(i, j, k, c) = t.at(orig[0] + i, orig[1] + j, orig[2] + k, c);
    return out;
}

void check_training_volume(const Volume& v, const std::array<int, 3>& patch) {
    v.validate();
    if (v.data.ch != 2) throw std::invalid_argument("training expects dual-channel volumes");
    for (int a = 0; a < 3; ++a)
        if (v.data.dims[a] < patch[a])
            throw std::invalid_argument("volume smaller than the training patch");
}

// Reconstruction-side gradient shared by both stages; disc gradients picked up
// here are discarded before the discriminator's own update.
Tensor recon_gradient(const Tensor& x, const Tensor& xh, const VqTrainConfig& cfg, bool adv_on,
                      Discriminator& disc, const Discriminator::Cache& disc_cache,
                      const Tensor& scores) {
    Tensor dxh;
    nn::l1_loss(xh, x, &dxh);
    if (cfg.w_perc > 0.0f) {
        const Tensor dperc = perceptual_l1_grad(xh, x);
        ops().axpy(cfg.w_perc, dperc.v.data(), dxh.v.data(), dxh.v.size());
    }
    if (adv_on) {
        Tensor dscores(scores.dims, scores.ch);
        const float gs = -cfg.w_adv / static_cast<float>(scores.numel());
        std::fill(dscores.v.begin(), dscores.v.end(), gs);
        const Tensor dadv = disc.backward(disc_cache, dscores);
        ops().add(dxh.v.data(), dadv.v.data(), dxh.v.data(), dxh.v.size());
    }
    return dxh;
}

// One hinge update contribution for a (real, fake) pair; caller zeroes and
// applies the optimizer.
void disc_hinge_backward(Discriminator& disc, const Tensor& real, const Tensor& fake,
                         float inv_pairs) {
    Discriminator::Cache cr;
    const Tensor sr = disc.forward(real, &cr);
    Tensor dsr(sr.dims, sr.ch);
    const float ns = static_cast<float>(sr.numel());
    for (size_t i = 0; i < sr.v.size(); ++i)
        dsr.v[i] = (1.0f - sr.v[i] > 0.0f) ? -inv_pairs / ns : 0.0f;
    disc.backward(cr, dsr);

    Discriminator::Cache cf;
    const Tensor sf = disc.forward(fake, &cf);
    Tensor dsf(sf.dims, sf.ch);
    for (size_t i = 0; i < sf.v.size(); ++i)
        dsf.v[i] = (1.0f + sf.v[i] > 0.0f) ? inv_pairs / ns : 0.0f;
    disc.backward(cf, dsf);
}

int reseed_dead_codes(Codebook& cb, const std::vector<int64_t>& usage_mark, const Tensor& z_pool,
                      Rng& rng) {
    int reseeded = 0;
    const size_t sites = z_pool.sites();
    if (sites == 0) return 0;
    for (int k = 0; k < cb.K; ++k) {
        if (cb.usage[static_cast<size_t>(k)] != usage_mark[static_cast<size_t>(k)]) continue;
        const size_t s = static_cast<size_t>(rng.randint(static_cast<int64_t>(sites)));
        const size_t dst = static_cast<size_t>(k) * static_cast<size_t>(cb.d);
        const size_t src = s * static_cast<size_t>(cb.d);
        for (int c = 0; c < cb.d; ++c) {
            cb.vectors.val[dst + static_cast<size_t>(c)] = z_pool.v[src + static_cast<size_t>(c)];
            cb.vectors.m[dst + static_cast<size_t>(c)] = 0.0f;
            cb.vectors.v[dst + static_cast<size_t>(c)] = 0.0f;
            cb.vectors.grad[dst + static_cast<size_t>(c)] = 0.0f;
        }
        ++reseeded;
    }
    return reseeded;
}

}  // namespace

VqModels train_stage1(const std::vector<Volume>& dataset, const VqTrainConfig& cfg,
                      VqTrainStats* stats) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("stage-1 training needs a non-empty dataset");
    for (const Volume& v : dataset) check_training_volume(v, cfg.patch_size);

    Rng rng(Rng::derive(cfg.seed, "vqvae-stage1"));
    VqModels m;
    m.cfg = cfg;
    m.enc.init(2, cfg.base_width, cfg.code_dim, rng);
    m.dec.init(2, cfg.base_width, cfg.code_dim, rng);
    m.codebook.init(cfg.codebook_size, cfg.code_dim, rng);
    m.disc.init(2, cfg.disc_width, rng);

    nn::Adam opt_g, opt_d;
    opt_g.lr = cfg.lr_stage1;
    opt_d.lr = cfg.lr_stage1;
    std::vector<nn::Param*> gparams = m.enc.params();
    {
        const auto dp = m.dec.params();
        gparams.insert(gparams.end(), dp.begin(), dp.end());
        gparams.push_back(&m.codebook.vectors);
    }
    std::vector<nn::Param*> dparams = m.disc.params();

    std::vector<int64_t> usage_mark = m.codebook.usage;
    Tensor z_pool;

    for (int step = 0; step < cfg.steps_stage1; ++step) {
        const bool adv_on = step >= cfg.disc_start_step && cfg.w_adv > 0.0f;
        nn::zero_grads(gparams);
        double step_recon = 0.0, step_total = 0.0, step_adv = 0.0;
        std::vector<Tensor> reals, fakes;

        for (int b = 0; b < cfg.batch_size; ++b) {
            const Volume& vol = dataset[static_cast<size_t>(
                rng.randint(static_cast<int64_t>(dataset.size())))];
            const Tensor x = random_patch(vol.data, cfg.patch_size, rng);

            EncoderModel::Cache ec;
            const Tensor z = m.enc.forward(x, &ec);
            const QuantizeResult q = quantize(z, m.codebook);
            DecoderModel::Cache dc;
            const Tensor xh = m.dec.forward(q.zq, &dc);

            Discriminator::Cache disc_c;
            Tensor scores;
            if (adv_on) scores = m.disc.forward(xh, &disc_c);
            const VqLossParts parts = vq_loss(x, xh, z, q.zq, adv_on ? &scores : nullptr, cfg);
            if (!std::isfinite(parts.total))
                throw NumericalFailureError("stage-1 loss diverged at step " +
                                            std::to_string(step));

            const Tensor dxh = recon_gradient(x, xh, cfg, adv_on, m.disc, disc_c, scores);
            const Tensor dzq = m.dec.backward(dc, dxh);

            // straight-through: the decoder gradient passes the quantizer
            // unchanged, plus the commitment pull toward the chosen codes
            Tensor dz = dzq;
            const float cscale = 2.0f / static_cast<float>(z.numel());
            for (size_t i = 0; i < z.v.size(); ++i)
                dz.v[i] += cfg.beta_commit * cscale * (z.v[i] - q.zq.v[i]);
            // codebook rows move toward their assigned encoder outputs
            for (size_t s = 0; s < q.indices.size(); ++s) {
                const size_t row =
                    static_cast<size_t>(q.indices[s]) * static_cast<size_t>(m.codebook.d);
                const size_t zoff = s * static_cast<size_t>(m.codebook.d);
                for (int c = 0; c < m.codebook.d; ++c)
                    m.codebook.vectors.grad[row + static_cast<size_t>(c)] +=
                        cscale * (q.zq.v[zoff + static_cast<size_t>(c)] -
                                  z.v[zoff + static_cast<size_t>(c)]);
            }
            m.enc.backward(ec, dz);

            step_recon += parts.recon_l1;
            step_total += parts.total;
            step_adv += parts.adv;
            if (adv_on) {
                reals.push_back(x);
                fakes.push_back(xh);
            }
            z_pool = z;
        }

        const float inv_b = 1.0f / static_cast<float>(cfg.batch_size);
        for (nn::Param* p : gparams) ops().scale(inv_b, p->grad.data(), p->grad.size());
        opt_g.update(gparams);

        if (adv_on) {
            nn::zero_grads(dparams);
            for (size_t i = 0; i < reals.size(); ++i)
                disc_hinge_backward(m.disc, reals[i], fakes[i],
                                    1.0f / static_cast<float>(reals.size()));
            opt_d.update(dparams);
        }

        if (stats) {
            stats->recon_l1.push_back(step_recon * inv_b);
            stats->total.push_back(step_total * inv_b);
            stats->adv.push_back(step_adv * inv_b);
        }

        if ((step + 1) % cfg.reseed_every_steps == 0 && !z_pool.v.empty()) {
            const int n = reseed_dead_codes(m.codebook, usage_mark, z_pool, rng);
            if (stats) stats->reseeded_codes += n;
            usage_mark = m.codebook.usage;
        }
    }

    m.stage1_done = true;
    return m;
}

void finetune_stage2(const std::vector<Volume>& dataset, VqModels& m, VqTrainStats* stats) {
    if (!m.stage1_done) throw InvalidStateError("stage-2 finetuning requires stage-1 models");
    const VqTrainConfig& cfg = m.cfg;
    if (dataset.empty()) throw std::invalid_argument("stage-2 finetuning needs a non-empty dataset");
    for (const Volume& v : dataset) {
        check_training_volume(v, cfg.patch_size);
        for (int a = 0; a < 3; ++a)
            if (v.data.dims[a] % cfg.patch_size[a] != 0)
                throw std::invalid_argument("stage-2 volumes must tile by the patch size");
    }

    Rng rng(Rng::derive(cfg.seed, "vqvae-stage2"));
    nn::Adam opt_dec, opt_disc;
    opt_dec.lr = cfg.lr_stage2;
    opt_disc.lr = cfg.lr_stage2;
    std::vector<nn::Param*> dec_params = m.dec.params();
    std::vector<nn::Param*> disc_params = m.disc.params();

    // whole volumes, one per step (mini-batch of 1)
    for (int step = 0; step < cfg.steps_stage2; ++step) {
        const bool adv_on =
            (cfg.steps_stage1 + step) >= cfg.disc_start_step && cfg.w_adv > 0.0f;
        const Volume& vol =
            dataset[static_cast<size_t>(rng.randint(static_cast<int64_t>(dataset.size())))];

        const Tensor z = encode_volume(vol, m, cfg.patch_size);
        const QuantizeResult q = quantize(z, m.codebook);
        DecoderModel::Cache dc;
        const Tensor xh = m.dec.forward(q.zq, &dc);

        Discriminator::Cache disc_c;
        Tensor scores;
        if (adv_on) scores = m.disc.forward(xh, &disc_c);
        const VqLossParts parts =
            vq_loss(vol.data, xh, z, q.zq, adv_on ? &scores : nullptr, cfg);
        if (!std::isfinite(parts.total))
            throw NumericalFailureError("stage-2 loss diverged at step " + std::to_string(step));

        const Tensor dxh = recon_gradient(vol.data, xh, cfg, adv_on, m.disc, disc_c, scores);
        nn::zero_grads(dec_params);
        m.dec.backward(dc, dxh);
        opt_dec.update(dec_params);

        if (adv_on) {
            nn::zero_grads(disc_params);
            disc_hinge_backward(m.disc, vol.data, xh, 1.0f);
            opt_disc.update(disc_params);
        }
        if (stats) {
            stats->recon_l1.push_back(parts.recon_l1);
            stats->total.push_back(parts.total);
            stats->adv.push_back(parts.adv);
        }
    }
    m.stage2_done = true;
}

Tensor encode_volume(const Volume& v, const VqModels& m, std::array<int, 3> patch_size) {
    const auto [patches, grid] = partition(v, patch_size);
    std::vector<Tensor> latents;
    latents.reserve(patches.size());
    for (const Volume& p : patches) latents.push_back(m.enc.forward(p.data));
    return reassemble(latents, grid, 4);
}

Volume reconstruct_volume(const Volume& v, VqModels& m) {
    const Tensor z = encode_volume(v, m, m.cfg.patch_size);
    const QuantizeResult q = quantize(z, m.codebook);
    Volume out;
    out.data = m.dec.forward(q.zq);
    out.spacing = v.spacing;
    out.channel_roles = v.channel_roles;
    return out;
}

}  // namespace synbt::vq
