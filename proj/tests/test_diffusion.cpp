#include "doctest.h"

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "synbt/diffusion.hpp"
#include "synbt/errors.hpp"
#include "synbt/hash.hpp"
#include "synbt/phantom.hpp"
#include "synbt/rng.hpp"
#include "synbt/vqvae.hpp"

using namespace synbt;

namespace {

Tensor random_tensor(std::array<int, 3> dims, int ch, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(dims, ch);
    for (float& x : t.v) x = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

Volume make_vol(std::array<int, 3> dims, Rng& rng) {
    Volume v;
    v.data = random_tensor(dims, 2, rng);
    v.channel_roles = {"pre", "post"};
    return v;
}

MaskVolume empty_mask(std::array<int, 3> dims) {
    MaskVolume m;
    m.data = Tens<uint8_t>(dims, 1);
    return m;
}

std::string params_hash(std::vector<nn::Param*> ps) {
    Fnv1a h;
    for (const nn::Param* p : ps) h.update_vec(p->val);
    return h.hex();
}

// Encoder-only autoencoder stand-in for conditioning tests that do not need
// trained weights.
vq::VqModels mini_models(uint64_t seed) {
    vq::VqModels m;
    Rng rng(seed);
    m.enc.init(2, m.cfg.base_width, m.cfg.code_dim, rng);
    m.dec.init(2, m.cfg.base_width, m.cfg.code_dim, rng);
    m.codebook.init(m.cfg.codebook_size, m.cfg.code_dim, rng);
    m.disc.init(2, m.cfg.disc_width, rng);
    m.stage1_done = true;
    return m;
}

// Independent max-norm distance from a voxel to the nearest mask voxel.
int cheb_dist(const Tens<uint8_t>& m, int x, int y, int z) {
    int best = INT_MAX;
    for (int a = 0; a < m.dims[0]; ++a)
        for (int b = 0; b < m.dims[1]; ++b)
            for (int c = 0; c < m.dims[2]; ++c) {
                if (!m.at(a, b, c, 0)) continue;
                const int d = std::max({std::abs(a - x), std::abs(b - y), std::abs(c - z)});
                best = std::min(best, d);
            }
    return best;
}

// Shared slow fixture: stage-1 autoencoder plus a denoiser trained on the
// standard 20-phantom desk set.
struct DiffRun {
    std::vector<Volume> vols;
    std::vector<MaskVolume> masks;
    vq::VqModels vqm;
    diff::NoiseSchedule sched;
    diff::DenoiserModel den;
    diff::DiffTrainStats stats;
};

DiffRun& diff_run() {
    static DiffRun run = [] {
        DiffRun r;
        PhantomSpec spec;
        for (uint64_t s = 1; s <= 20; ++s) {
            Phantom p = generate_phantom(spec, s);
            r.vols.push_back(normalize(p.vol, 0.5, 99.5));
            r.masks.push_back(p.tumor);
        }
        vq::VqTrainConfig vcfg;
        vcfg.seed = 7;
        vcfg.steps_stage1 = 2000;
        r.vqm = vq::train_stage1(r.vols, vcfg);

        diff::DiffTrainConfig dcfg;  // 300 steps, batch 4, T = 1000
        dcfg.seed = 11;
        r.sched = diff::make_schedule(dcfg.T, dcfg.beta_start, dcfg.beta_end);
        r.den = diff::train_denoiser(r.vols, r.masks, r.vqm, r.sched, dcfg, &r.stats);
        return r;
    }();
    return run;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("schedule tables follow the linear beta ramp") {
    const diff::NoiseSchedule one = diff::make_schedule(1);
    REQUIRE(one.T == 1);
    CHECK(one.beta[0] == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(one.alpha_bar[0] == one.alpha[0]);
    CHECK(one.alpha_bar[0] == doctest::Approx(1.0 - 1e-4).epsilon(1e-12));

    const diff::NoiseSchedule s = diff::make_schedule(5, 0.1, 0.3);
    const double want[5] = {0.1, 0.15, 0.2, 0.25, 0.3};
    for (int t = 0; t < 5; ++t) {
        CHECK(s.beta[static_cast<size_t>(t)] == doctest::Approx(want[t]).epsilon(1e-12));
        CHECK(s.alpha[static_cast<size_t>(t)] ==
              doctest::Approx(1.0 - want[t]).epsilon(1e-12));
    }
}

TEST_CASE("schedule cumulative products match a direct oracle") {
    for (int T : {1, 10, 1000}) {
        const diff::NoiseSchedule s = diff::make_schedule(T);
        double prod = 1.0;
        for (int t = 0; t < T; ++t) {
            const double b =
                T == 1 ? 1e-4 : 1e-4 + (0.02 - 1e-4) * static_cast<double>(t) / (T - 1);
            prod *= 1.0 - b;
            CHECK(s.alpha_bar[static_cast<size_t>(t)] ==
                  doctest::Approx(prod).epsilon(1e-12));
            if (t > 0)
                CHECK(s.alpha_bar[static_cast<size_t>(t)] <
                      s.alpha_bar[static_cast<size_t>(t) - 1]);
            CHECK(static_cast<double>(s.sqrt_one_minus_alpha_bar[static_cast<size_t>(t)]) ==
                  doctest::Approx(std::sqrt(1.0 - prod)).epsilon(1e-6));
        }
    }
    // headline endpoint of the default thousand-step table
    const diff::NoiseSchedule s = diff::make_schedule(1000);
    CHECK(s.alpha_bar[999] == doctest::Approx(4.04e-5).epsilon(0.01));
    CHECK(static_cast<double>(s.sqrt_alpha_bar[999]) ==
          doctest::Approx(std::sqrt(s.alpha_bar[999])).epsilon(1e-4));
    CHECK(static_cast<double>(s.sqrt_alpha_bar[999]) == doctest::Approx(6.4e-3).epsilon(0.01));
}

TEST_CASE("schedule rejects invalid ranges") {
    CHECK_THROWS_AS(diff::make_schedule(0), std::invalid_argument);
    CHECK_THROWS_AS(diff::make_schedule(10, 0.0, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(diff::make_schedule(10, 1e-4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(diff::make_schedule(10, 0.3, 0.2), std::invalid_argument);
}

TEST_CASE("forward step scales exactly under zero noise") {
    const diff::NoiseSchedule s = diff::make_schedule(4, 0.19, 0.19);
    Rng rng(31);
    const Tensor z = random_tensor({3, 2, 4}, 2, rng);
    const Tensor zero(z.dims, z.ch);

    for (int t = 0; t < 4; ++t) {
        const Tensor y = diff::forward_step(z, t, zero, s);
        for (size_t i = 0; i < z.v.size(); ++i)
            CHECK(y.v[i] == s.sqrt_alpha[static_cast<size_t>(t)] * z.v[i]);
    }

    const Tensor n = random_tensor({3, 2, 4}, 2, rng);
    const Tensor y = diff::forward_step(zero, 1, n, s);
    for (size_t i = 0; i < n.v.size(); ++i) CHECK(y.v[i] == s.sqrt_beta[1] * n.v[i]);

    // hand values: beta 0.19 -> sqrt(alpha) = 0.9
    Tensor two(std::array<int, 3>{1, 1, 1}, 1), one(std::array<int, 3>{1, 1, 1}, 1);
    two.v[0] = 2.0f;
    one.v[0] = 1.0f;
    CHECK(diff::forward_step(two, 0, one, s).v[0] ==
          doctest::Approx(0.9 * 2.0 + std::sqrt(0.19)).epsilon(1e-6));

    CHECK_THROWS_AS(diff::forward_step(z, -1, zero, s), std::invalid_argument);
    CHECK_THROWS_AS(diff::forward_step(z, 4, zero, s), std::invalid_argument);
    CHECK_THROWS_AS(diff::forward_step(z, 0, Tensor({1, 1, 1}, 2), s), std::invalid_argument);
}

TEST_CASE("zero-noise composition lands exactly on the closed-form jump") {
    // power-of-two values survive each per-step rounding, so the stepwise
    // product must land bit-for-bit on the stored cumulative factor
    const float vals[] = {1.0f, -2.0f, 0.5f, 4.0f, -0.25f, 8.0f, -0.0625f, 16.0f};
    Tensor z0(std::array<int, 3>{2, 2, 2}, 1);
    for (size_t i = 0; i < z0.v.size(); ++i) z0.v[i] = vals[i];
    const Tensor zero(z0.dims, z0.ch);

    for (int T : {1, 10, 50, 1000}) {
        const diff::NoiseSchedule s = diff::make_schedule(T);
        for (int t : {0, T / 3, T - 1}) {
            Tensor it = z0;
            for (int u = 0; u <= t; ++u) it = diff::forward_step(it, u, zero, s);
            const Tensor jump = diff::forward_to(z0, t, zero, s);
            CHECK(std::memcmp(it.v.data(), jump.v.data(), it.v.size() * sizeof(float)) == 0);
        }
    }

    // arbitrary values still agree to float precision
    Rng rng(8);
    const Tensor g = random_tensor({2, 2, 2}, 1, rng);
    const diff::NoiseSchedule s = diff::make_schedule(50);
    Tensor it = g;
    for (int u = 0; u < 50; ++u) it = diff::forward_step(it, u, zero, s);
    const Tensor jump = diff::forward_to(g, 49, zero, s);
    for (size_t i = 0; i < g.v.size(); ++i)
        CHECK(it.v[i] == doctest::Approx(jump.v[i]).epsilon(1e-5));
}

TEST_CASE("closed-form jump reproduces the marginal variance") {
    const diff::NoiseSchedule s = diff::make_schedule(1000);
    const int t = 400;
    Tensor z0(std::array<int, 3>{40, 50, 50}, 1);
    z0.fill(0.7f);
    Tensor n(z0.dims, 1);
    Rng rng(123);
    fill_normal(n.v.data(), n.v.size(), rng);

    const Tensor z_t = diff::forward_to(z0, t, n, s);
    const float base = s.sqrt_alpha_bar[t] * 0.7f;
    double mean = 0.0;
    for (float x : z_t.v) mean += static_cast<double>(x) - base;
    mean /= static_cast<double>(z_t.v.size());
    double var = 0.0;
    for (float x : z_t.v) {
        const double d = static_cast<double>(x) - base - mean;
        var += d * d;
    }
    var /= static_cast<double>(z_t.v.size() - 1);
    CHECK(var == doctest::Approx(1.0 - s.alpha_bar[t]).epsilon(0.01));
}

TEST_CASE("reverse step matches the hand-built two-step schedule") {
    // alpha = {4/9, 0.81} so alpha_bar ends at 0.36 with beta_1 = 0.19
    diff::NoiseSchedule s;
    s.T = 2;
    s.beta = {5.0 / 9.0, 0.19};
    s.alpha = {4.0 / 9.0, 0.81};
    s.alpha_bar = {4.0 / 9.0, 0.36};
    s.sqrt_alpha = {static_cast<float>(2.0 / 3.0), 0.9f};
    s.sqrt_beta = {static_cast<float>(std::sqrt(5.0 / 9.0)),
                   static_cast<float>(std::sqrt(0.19))};
    s.sqrt_alpha_bar = {static_cast<float>(2.0 / 3.0), 0.6f};
    s.sqrt_one_minus_alpha_bar = {static_cast<float>(std::sqrt(5.0 / 9.0)), 0.8f};

    Tensor z(std::array<int, 3>{1, 1, 1}, 1), eps(z.dims, 1), n(z.dims, 1);
    z.v[0] = 1.0f;
    eps.v[0] = 0.8f;

    CHECK(diff::reverse_step(z, 1, eps, nullptr, s).v[0] ==
          doctest::Approx(0.9).epsilon(1e-6));

    n.v[0] = 0.5f;
    CHECK(diff::reverse_step(z, 1, eps, &n, s).v[0] ==
          doctest::Approx(0.9 + std::sqrt(0.19) * 0.5).epsilon(1e-6));

    // zero prediction, zero noise: pure 1/sqrt(alpha) rescale
    Tensor zeps(z.dims, 1);
    CHECK(diff::reverse_step(z, 1, zeps, nullptr, s).v[0] ==
          doctest::Approx(1.0 / 0.9).epsilon(1e-6));

    // the noise term is suppressed at t = 0 no matter what is passed
    const Tensor quiet = diff::reverse_step(z, 0, eps, nullptr, s);
    const Tensor noisy = diff::reverse_step(z, 0, eps, &n, s);
    CHECK(quiet.v[0] == noisy.v[0]);

    CHECK_THROWS_AS(diff::reverse_step(z, 2, eps, nullptr, s), std::invalid_argument);
    CHECK_THROWS_AS(diff::reverse_step(z, -1, eps, nullptr, s), std::invalid_argument);
}

TEST_CASE("reverse step with the true noise recovers the posterior mean") {
    const diff::NoiseSchedule s = diff::make_schedule(60, 1e-3, 0.03);
    Rng rng(77);
    const Tensor z0 = random_tensor({3, 4, 5}, 2, rng);
    Tensor eps(z0.dims, z0.ch);
    fill_normal(eps.v.data(), eps.v.size(), rng);

    for (int t : {1, 30, 59}) {
        const Tensor z_t = diff::forward_to(z0, t, eps, s);
        const Tensor rev = diff::reverse_step(z_t, t, eps, nullptr, s);

        const double ab = s.alpha_bar[static_cast<size_t>(t)];
        const double ab_prev = s.alpha_bar[static_cast<size_t>(t) - 1];
        const double a = s.alpha[static_cast<size_t>(t)];
        const double b = s.beta[static_cast<size_t>(t)];
        double worst = 0.0;
        for (size_t i = 0; i < z0.v.size(); ++i) {
            const double mu = (std::sqrt(ab_prev) * b * z0.v[i] +
                               std::sqrt(a) * (1.0 - ab_prev) * z_t.v[i]) /
                              (1.0 - ab);
            worst = std::max(worst, std::abs(rev.v[i] - mu));
        }
        CHECK(worst < 1e-4);
        CHECK(worst < std::sqrt(b));
    }
}

TEST_CASE("ddim inversion is exact for an oracle noise estimate") {
    const diff::NoiseSchedule s = diff::make_schedule(1000);
    Rng rng(19);
    for (int t : {3, 500, 999}) {
        std::vector<double> z0(64), eps(64), z_t(64);
        for (size_t i = 0; i < z0.size(); ++i) {
            z0[i] = (rng.coin(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
            eps[i] = rng.normal();
        }
        const double sab = std::sqrt(s.alpha_bar[static_cast<size_t>(t)]);
        const double somab = std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]);
        for (size_t i = 0; i < z0.size(); ++i) z_t[i] = sab * z0[i] + somab * eps[i];

        const std::vector<double> rec = diff::ddim_invert_z0(z_t, t, eps, s);
        for (size_t i = 0; i < z0.size(); ++i)
            CHECK(std::abs(rec[i] - z0[i]) / std::abs(z0[i]) <= 1e-10);
    }
    CHECK_THROWS_AS(diff::ddim_invert_z0({1.0}, 0, {1.0, 2.0}, s), std::invalid_argument);
    CHECK_THROWS_AS(diff::ddim_invert_z0({1.0}, 1000, {1.0}, s), std::invalid_argument);
}

TEST_CASE("a single deterministic ddim step inverts an oracle predictor") {
    const diff::NoiseSchedule s = diff::make_schedule(10);
    std::vector<double> target(2 * 2 * 2 * 8);
    for (size_t i = 0; i < target.size(); ++i)
        target[i] = -1.0 + 2.0 * static_cast<double>(i) / (target.size() - 1);

    auto oracle = [&](const Tensor& z_t, int t, const diff::Condition&) {
        const double sab = std::sqrt(s.alpha_bar[static_cast<size_t>(t)]);
        const double somab = std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]);
        Tensor e(z_t.dims, z_t.ch);
        for (size_t i = 0; i < e.v.size(); ++i)
            e.v[i] = static_cast<float>((z_t.v[i] - sab * target[i]) / somab);
        return e;
    };

    const Tensor out =
        diff::ddim_sample(oracle, diff::Condition{}, s, {2, 2, 2}, 8, 1, 0.0, 5);
    REQUIRE(out.v.size() == target.size());
    for (size_t i = 0; i < target.size(); ++i)
        CHECK(out.v[i] == doctest::Approx(target[i]).epsilon(1e-5));
}

TEST_CASE("ddim timestep grids are evenly spaced and complete") {
    const std::vector<int> ten = diff::ddim_timesteps(1000, 10);
    const std::vector<int> want = {999, 888, 777, 666, 555, 444, 333, 222, 111, 0};
    CHECK(ten == want);

    const std::vector<int> full = diff::ddim_timesteps(1000, 1000);
    REQUIRE(full.size() == 1000);
    for (int k = 0; k < 1000; ++k) CHECK(full[static_cast<size_t>(k)] == 999 - k);

    CHECK(diff::ddim_timesteps(1, 1) == std::vector<int>{0});
    CHECK(diff::ddim_timesteps(7, 1) == std::vector<int>{6});

    for (auto [T, n] : {std::pair{1000, 17}, {50, 9}, {10, 10}}) {
        const std::vector<int> ts = diff::ddim_timesteps(T, n);
        REQUIRE(static_cast<int>(ts.size()) == n);
        CHECK(ts.front() == T - 1);
        CHECK(ts.back() == 0);
        for (size_t k = 1; k < ts.size(); ++k) CHECK(ts[k] < ts[k - 1]);
    }

    CHECK_THROWS_AS(diff::ddim_timesteps(10, 0), std::invalid_argument);
    CHECK_THROWS_AS(diff::ddim_timesteps(10, 11), std::invalid_argument);
}

TEST_CASE("ddim sampling is a pure function of its seed") {
    const diff::NoiseSchedule s = diff::make_schedule(20);
    auto shrink = [](const Tensor& z_t, int, const diff::Condition&) {
        Tensor e = z_t;
        for (float& x : e.v) x *= 0.3f;
        return e;
    };

    const Tensor a = diff::ddim_sample(shrink, diff::Condition{}, s, {2, 3, 2}, 4, 5, 0.0, 11);
    const Tensor b = diff::ddim_sample(shrink, diff::Condition{}, s, {2, 3, 2}, 4, 5, 0.0, 11);
    CHECK(std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(float)) == 0);

    const Tensor c = diff::ddim_sample(shrink, diff::Condition{}, s, {2, 3, 2}, 4, 5, 0.0, 12);
    CHECK(std::memcmp(a.v.data(), c.v.data(), a.v.size() * sizeof(float)) != 0);

    // stochastic variant is still reproducible under a fixed seed
    const Tensor d1 = diff::ddim_sample(shrink, diff::Condition{}, s, {2, 3, 2}, 4, 5, 0.7, 11);
    const Tensor d2 = diff::ddim_sample(shrink, diff::Condition{}, s, {2, 3, 2}, 4, 5, 0.7, 11);
    CHECK(std::memcmp(d1.v.data(), d2.v.data(), d1.v.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(a.v.data(), d1.v.data(), a.v.size() * sizeof(float)) != 0);
}

TEST_CASE("mask filling replaces the region with shell-mean tissue") {
    Rng rng(40);
    const std::array<int, 3> dims{8, 8, 8};
    const Volume v = make_vol(dims, rng);

    MaskVolume m = empty_mask(dims);
    for (int x = 2; x < 4; ++x)
        for (int y = 3; y < 5; ++y)
            for (int z = 2; z < 4; ++z) m.data.at(x, y, z, 0) = 1;

    const Volume filled = diff::mask_fill(v, m);

    // oracle: per-channel mean over voxels at max-norm distance 1..3
    double want[2] = {0.0, 0.0};
    size_t cnt = 0;
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y)
            for (int z = 0; z < 8; ++z) {
                const int d = cheb_dist(m.data, x, y, z);
                if (d < 1 || d > 3) continue;
                ++cnt;
                for (int c = 0; c < 2; ++c) want[c] += v.data.at(x, y, z, c);
            }
    REQUIRE(cnt > 0);

    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y)
            for (int z = 0; z < 8; ++z)
                for (int c = 0; c < 2; ++c) {
                    if (m.data.at(x, y, z, 0)) {
                        CHECK(filled.data.at(x, y, z, c) ==
                              doctest::Approx(want[c] / cnt).epsilon(1e-6));
                    } else {
                        CHECK(filled.data.at(x, y, z, c) == v.data.at(x, y, z, c));
                    }
                }
}

TEST_CASE("mask filling handles the empty and full extremes") {
    Rng rng(41);
    const std::array<int, 3> dims{6, 6, 6};
    const Volume v = make_vol(dims, rng);

    const Volume same = diff::mask_fill(v, empty_mask(dims));
    CHECK(std::memcmp(same.data.v.data(), v.data.v.data(),
                      v.data.v.size() * sizeof(float)) == 0);

    MaskVolume full = empty_mask(dims);
    full.data.fill(1);
    const Volume flat = diff::mask_fill(v, full);
    double mean[2] = {0.0, 0.0};
    for (size_t s = 0; s < v.data.sites(); ++s)
        for (int c = 0; c < 2; ++c) mean[c] += v.data.v[s * 2 + static_cast<size_t>(c)];
    for (int c = 0; c < 2; ++c) mean[c] /= static_cast<double>(v.data.sites());
    for (size_t s = 0; s < v.data.sites(); ++s)
        for (int c = 0; c < 2; ++c)
            CHECK(flat.data.v[s * 2 + static_cast<size_t>(c)] ==
                  doctest::Approx(mean[c]).epsilon(1e-6));

    MaskVolume off = empty_mask({6, 6, 4});
    CHECK_THROWS_AS(diff::mask_fill(v, off), std::invalid_argument);
    MaskVolume label = empty_mask(dims);
    label.kind = MaskKind::label;
    CHECK_THROWS_AS(diff::mask_fill(v, label), std::invalid_argument);
}

TEST_CASE("conditions carry masked latents and soft mask occupancy") {
    vq::VqModels vqm = mini_models(60);
    Rng rng(61);
    const std::array<int, 3> dims{8, 8, 8};
    const Volume v = make_vol(dims, rng);

    const diff::Condition none = diff::build_condition(v, empty_mask(dims), vqm);
    const Tensor direct = vq::encode_volume(v, vqm, vqm.cfg.patch_size);
    REQUIRE(none.z_masked.same_shape(direct));
    CHECK(std::memcmp(none.z_masked.v.data(), direct.v.data(),
                      direct.v.size() * sizeof(float)) == 0);
    CHECK(none.mask_lowres.dims == none.z_masked.dims);
    CHECK(none.mask_lowres.ch == 1);
    for (float x : none.mask_lowres.v) CHECK(x == 0.0f);

    // aligned 4^3 block -> exactly one latent site fully covered
    MaskVolume block = empty_mask(dims);
    for (int x = 4; x < 8; ++x)
        for (int y = 4; y < 8; ++y)
            for (int z = 4; z < 8; ++z) block.data.at(x, y, z, 0) = 1;
    const diff::Condition one = diff::build_condition(v, block, vqm);
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y)
            for (int z = 0; z < 2; ++z)
                CHECK(one.mask_lowres.at(x, y, z, 0) ==
                      (x == 1 && y == 1 && z == 1 ? 1.0f : 0.0f));

    // half-covered latent cell reports fractional occupancy
    MaskVolume part = empty_mask(dims);
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y)
            for (int z = 0; z < 2; ++z) part.data.at(x, y, z, 0) = 1;
    const diff::Condition frac = diff::build_condition(v, part, vqm);
    CHECK(frac.mask_lowres.at(0, 0, 0, 0) == 0.125f);
    for (float x : frac.mask_lowres.v) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
    }
}

TEST_CASE("denoiser wiring matches the latent channel contract") {
    vq::VqModels vqm = mini_models(70);
    Rng rng(71);
    std::vector<Volume> vols;
    std::vector<MaskVolume> masks;
    for (int i = 0; i < 2; ++i) {
        vols.push_back(make_vol({16, 16, 32}, rng));
        masks.push_back(empty_mask({16, 16, 32}));
        masks.back().data.at(4 + i, 5, 6, 0) = 1;
    }

    diff::DiffTrainConfig cfg;
    cfg.steps = 0;
    cfg.seed = 21;
    const diff::NoiseSchedule s = diff::make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    diff::DenoiserModel den = diff::train_denoiser(vols, masks, vqm, s, cfg);

    CHECK(den.unet.in_ch == 2 * vqm.cfg.code_dim + 1);
    CHECK(den.unet.out_ch == vqm.cfg.code_dim);
    CHECK(den.d_code == vqm.cfg.code_dim);
    CHECK(den.latent_scale > 0.0f);
    CHECK(std::isfinite(den.latent_scale));

    // a zero-step run must return the freshly initialized network untouched
    Rng init_rng(Rng::derive(cfg.seed, "diffusion-train"));
    nn::UNet3d fresh;
    fresh.init(2 * vqm.cfg.code_dim + 1, vqm.cfg.code_dim, cfg.base_width, cfg.levels,
               cfg.temb_dim, true, 0.0f, init_rng);
    CHECK(params_hash(den.unet.params()) == params_hash(fresh.params()));

    // prediction preserves the latent shape; the zeroed head starts silent
    const diff::Condition cond = diff::build_condition(vols[0], masks[0], vqm);
    Tensor z_t(cond.z_masked.dims, vqm.cfg.code_dim);
    fill_normal(z_t.v.data(), z_t.v.size(), rng);
    const Tensor pred = den.predict(z_t, 500, cond);
    REQUIRE(pred.same_shape(z_t));
    for (float x : pred.v) CHECK(x == 0.0f);

    const diff::NoiseSchedule other = diff::make_schedule(64);
    CHECK_THROWS_AS(diff::train_denoiser(vols, masks, vqm, other, cfg),
                    std::invalid_argument);
    vq::VqModels raw = mini_models(70);
    raw.stage1_done = false;
    CHECK_THROWS_AS(diff::train_denoiser(vols, masks, raw, s, cfg), InvalidStateError);
    std::vector<MaskVolume> short_masks(masks.begin(), masks.begin() + 1);
    CHECK_THROWS_AS(diff::train_denoiser(vols, short_masks, vqm, s, cfg),
                    std::invalid_argument);
}

TEST_CASE("denoiser training is deterministic and aborts on divergence") {
    vq::VqModels vqm = mini_models(80);
    Rng rng(81);
    std::vector<Volume> vols;
    std::vector<MaskVolume> masks;
    for (int i = 0; i < 4; ++i) {
        vols.push_back(make_vol({16, 16, 16}, rng));
        masks.push_back(empty_mask({16, 16, 16}));
        masks.back().data.at(8, 8, 8, 0) = 1;
    }

    diff::DiffTrainConfig cfg;
    cfg.T = 50;
    cfg.steps = 20;
    cfg.batch_size = 2;
    cfg.base_width = 8;
    cfg.seed = 5;
    const diff::NoiseSchedule s = diff::make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);

    diff::DiffTrainStats st1, st2;
    diff::DenoiserModel d1 = diff::train_denoiser(vols, masks, vqm, s, cfg, &st1);
    diff::DenoiserModel d2 = diff::train_denoiser(vols, masks, vqm, s, cfg, &st2);
    CHECK(params_hash(d1.unet.params()) == params_hash(d2.unet.params()));
    CHECK(d1.latent_scale == d2.latent_scale);
    REQUIRE(st1.mse.size() == 20);
    CHECK(st1.mse == st2.mse);
    CHECK(d1.trained);

    cfg.lr = 1e8f;
    CHECK_THROWS_AS(diff::train_denoiser(vols, masks, vqm, s, cfg), NumericalFailureError);
}

TEST_CASE("desk denoiser training learns the noise objective") {
    const DiffRun& r = diff_run();
    REQUIRE(r.stats.mse.size() == 300);

    // with a silent head the first loss is the second moment of unit noise
    CHECK(r.stats.mse.front() == doctest::Approx(1.0).epsilon(0.05));

    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 30; ++i) {
        head += r.stats.mse[static_cast<size_t>(i)];
        tail += r.stats.mse[static_cast<size_t>(300 - 30 + i)];
    }
    CHECK(tail / head < 0.6);
}

TEST_CASE("inpainting composites only inside the dilated mask") {
    DiffRun& r = diff_run();
    PhantomSpec spec;
    const Volume v = normalize(generate_phantom(spec, 300).vol, 0.5, 99.5);
    const MaskVolume m = generate_phantom(spec, 301).tumor;
    REQUIRE(count_nonzero(m.data) > 0);

    const Volume out = diff::inpaint(v, m, r.vqm, r.den, r.sched, 17);
    REQUIRE(out.data.same_shape(v.data));
    CHECK(out.spacing == v.spacing);

    size_t changed = 0;
    for (int x = 0; x < v.data.dims[0]; ++x)
        for (int y = 0; y < v.data.dims[1]; ++y)
            for (int z = 0; z < v.data.dims[2]; ++z) {
                const int d = cheb_dist(m.data, x, y, z);
                for (int c = 0; c < 2; ++c) {
                    if (d > 2) {
                        CHECK(out.data.at(x, y, z, c) == v.data.at(x, y, z, c));
                    } else if (out.data.at(x, y, z, c) != v.data.at(x, y, z, c)) {
                        ++changed;
                    }
                }
            }
    CHECK(changed > 0);

    const Volume again = diff::inpaint(v, m, r.vqm, r.den, r.sched, 17);
    CHECK(std::memcmp(out.data.v.data(), again.data.v.data(),
                      out.data.v.size() * sizeof(float)) == 0);

    CHECK_THROWS_AS(diff::inpaint(v, empty_mask(v.data.dims), r.vqm, r.den, r.sched, 17),
                    std::invalid_argument);
}

TEST_CASE("synthesized regions enhance in the post-contrast channel") {
    DiffRun& r = diff_run();
    PhantomSpec spec;
    const Volume v = normalize(generate_phantom(spec, 310).vol, 0.5, 99.5);
    const MaskVolume m = generate_phantom(spec, 311).tumor;
    REQUIRE(count_nonzero(m.data) > 0);

    const Volume out = diff::inpaint(v, m, r.vqm, r.den, r.sched, 23);
    double pre = 0.0, post = 0.0;
    size_t n = 0;
    for (size_t s = 0; s < m.data.v.size(); ++s) {
        if (!m.data.v[s]) continue;
        ++n;
        pre += out.data.v[s * 2];
        post += out.data.v[s * 2 + 1];
    }
    CHECK(post / static_cast<double>(n) > pre / static_cast<double>(n));
}

}  // TEST_SUITE
