#include "synbt/tissueseg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "synbt/errors.hpp"
#include "synbt/phantom.hpp"
#include "synbt/rng.hpp"

namespace synbt::tissue {

void TissueTrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    if (!(lr > 0.0f) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
    if (base_width < 1) throw std::invalid_argument("base_width must be >= 1");
    if (levels < 1) throw std::invalid_argument("levels must be >= 1");
}

// Relative-range air cutoff on the pre channel: air sits in a tight low mode
// well separated from tissue, so a fixed fraction of the robust intensity
// range lands inside the gap regardless of the raw intensity scale.
static float air_cutoff(const Tensor& t) {
    std::vector<float> vals;
    vals.reserve(t.numel() / static_cast<size_t>(t.ch));
    for (size_t i = 0; i < t.v.size(); i += static_cast<size_t>(t.ch)) vals.push_back(t.v[i]);
    auto pct = [&](double q) {
        size_t k = static_cast<size_t>(q * static_cast<double>(vals.size() - 1));
        std::nth_element(vals.begin(), vals.begin() + static_cast<ptrdiff_t>(k), vals.end());
        return vals[k];
    };
    const float lo = pct(0.005);
    const float hi = pct(0.995);
    return lo + 0.2f * (hi - lo);
}

MaskVolume make_training_label_map(const MaskVolume& fibro, const Volume& body, uint64_t seed) {
    fibro.validate();
    body.validate();
    if (fibro.kind != MaskKind::binary)
        throw std::invalid_argument("fibro mask must be binary");
    if (fibro.data.dims != body.data.dims)
        throw std::invalid_argument("fibro mask and body volume are on different grids");
    if (count_nonzero(fibro.data) == 0)
        throw std::invalid_argument("fibro mask is empty: nothing to label");

    Rng rng(Rng::derive(seed, "tissue-labels"));
    const int k = 2 + static_cast<int>(rng.randint(7));  // uniform {2..8}

    const float cutoff = air_cutoff(body.data);
    const int ch = body.data.ch;

    MaskVolume out;
    out.spacing = fibro.spacing;
    out.kind = MaskKind::label;
    out.data = Tens<uint8_t>(fibro.data.dims, 1);

    // Fibro wins outright; the rest splits into air (label 0) and cluster
    // candidates on the pre-channel intensity.
    std::vector<size_t> cand;
    std::vector<float> cand_val;
    for (size_t s = 0; s < out.data.v.size(); ++s) {
        if (fibro.data.v[s]) {
            out.data.v[s] = 1;
            continue;
        }
        const float x = body.data.v[s * static_cast<size_t>(ch)];
        if (x > cutoff) {
            cand.push_back(s);
            cand_val.push_back(x);
        }
    }
    if (cand.empty()) return out;  // fibro covers all tissue: labels {0, 1}

    Volume packed;
    packed.spacing = {1.0, 1.0, 1.0};
    packed.channel_roles = {"image"};
    packed.data = Tensor({static_cast<int>(cand.size()), 1, 1}, 1);
    packed.data.v = cand_val;
    MaskVolume clusters = kmeans_labels(packed, k, Rng::derive(seed, "tissue-kmeans"));
    for (size_t i = 0; i < cand.size(); ++i)
        out.data.v[cand[i]] = static_cast<uint8_t>(clusters.data.v[i] + 1);  // 2..k+1
    return out;
}

double dice_bce_loss(const Tensor& logits, const Tens<uint8_t>& target, Tensor* dlogits) {
    const double bce = nn::bce_logits_loss(logits, target, dlogits);

    const double eps = 1.0;
    double sp = 0.0, sy = 0.0, spy = 0.0;
    std::vector<float> prob(logits.v.size());
    for (size_t i = 0; i < logits.v.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.v[i])));
        prob[i] = static_cast<float>(p);
        const double y = target.v[i] ? 1.0 : 0.0;
        sp += p;
        sy += y;
        spy += p * y;
    }
    const double denom = sp + sy + eps;
    const double dice = (2.0 * spy + eps) / denom;
    if (dlogits) {
        for (size_t i = 0; i < logits.v.size(); ++i) {
            const double p = prob[i];
            const double y = target.v[i] ? 1.0 : 0.0;
            const double ddice_dp = (2.0 * y * denom - (2.0 * spy + eps)) / (denom * denom);
            dlogits->v[i] += static_cast<float>(-ddice_dp * p * (1.0 - p));
        }
    }
    return bce + (1.0 - dice);
}

Tensor TissueModel::predict_prob(const Tensor& single_ch) const {
    if (single_ch.ch != 1) throw std::invalid_argument("tissue model expects a single channel");
    const int s = 1 << cfg.levels;
    Volume wrap;
    wrap.spacing = {1.0, 1.0, 1.0};
    wrap.channel_roles = {"image"};
    wrap.data = single_ch;
    auto [padded, pad] = pad_to_multiple(wrap, {s, s, s});
    Tensor logits = unet.forward(padded.data, 0, nullptr);
    for (auto& x : logits.v) x = 1.0f / (1.0f + std::exp(-x));
    return pad.any() ? strip_pad(logits, pad) : logits;
}

TissueModel train_tissue_model(const std::vector<MaskVolume>& fibro_masks,
                               const std::vector<Volume>& bodies,
                               const TissueTrainConfig& cfg,
                               TissueTrainStats* stats) {
    cfg.validate();
    if (fibro_masks.empty()) throw std::invalid_argument("training set is empty");
    if (fibro_masks.size() != bodies.size())
        throw std::invalid_argument("fibro mask and body counts disagree");
    for (size_t i = 0; i < bodies.size(); ++i) {
        bodies[i].validate();
        fibro_masks[i].validate();
        if (fibro_masks[i].kind != MaskKind::binary)
            throw std::invalid_argument("fibro masks must be binary");
        if (fibro_masks[i].data.dims != bodies[i].data.dims)
            throw std::invalid_argument("fibro mask and body volume are on different grids");
    }

    TissueModel model;
    model.cfg = cfg;
    const uint64_t root = Rng::derive(cfg.seed, "tissue-train");
    Rng rng(root);
    model.unet.init(1, 1, cfg.base_width, cfg.levels, 0, true, 0.0f, rng);

    auto params = model.unet.params();
    nn::Adam opt;
    opt.lr = cfg.lr;

    const int s = 1 << cfg.levels;
    const size_t n = fibro_masks.size();
    for (int step = 0; step < cfg.steps; ++step) {
        const size_t idx = rng.randint(n);
        // fresh label map + fresh random mixture every step; the real
        // intensities only steer the clustering, never reach the network
        MaskVolume labels = make_training_label_map(
            fibro_masks[idx], bodies[idx], Rng::derive(root, 2 * static_cast<uint64_t>(step)));
        Volume render = gmm_render(labels, Rng::derive(root, 2 * static_cast<uint64_t>(step) + 1));
        if (stats) stats->renders_used++;

        auto [padded, pad] = pad_to_multiple(render, {s, s, s});
        Tens<uint8_t> target(padded.data.dims, 1);
        target.fill(0);
        const auto& fd = fibro_masks[idx].data;
        for (int x = 0; x < fd.dims[0]; ++x)
            for (int y = 0; y < fd.dims[1]; ++y)
                for (int z = 0; z < fd.dims[2]; ++z)
                    target.at(x + pad.lo[0], y + pad.lo[1], z + pad.lo[2], 0) = fd.at(x, y, z, 0);

        nn::zero_grads(params);
        nn::UNet3d::Cache cache;
        Tensor logits = model.unet.forward(padded.data, 0, &cache);
        Tensor dlog;
        const double loss = dice_bce_loss(logits, target, &dlog);
        if (!std::isfinite(loss))
            throw NumericalFailureError("tissue loss diverged at step " + std::to_string(step));
        model.unet.backward(cache, dlog);
        opt.update(params);
        if (stats) stats->loss.push_back(loss);
    }
    model.trained = cfg.steps > 0;
    return model;
}

MaskVolume threshold_prob(const Tensor& prob, const std::array<double, 3>& spacing, float thr) {
    if (prob.ch != 1) throw std::invalid_argument("probability map must be single-channel");
    MaskVolume out;
    out.spacing = spacing;
    out.kind = MaskKind::binary;
    out.data = Tens<uint8_t>(prob.dims, 1);
    for (size_t i = 0; i < prob.v.size(); ++i) out.data.v[i] = prob.v[i] > thr ? 1 : 0;
    return out;
}

MaskVolume segment_tissue(const Volume& v, const TissueModel& model) {
    v.validate();
    Tensor pre(v.data.dims, 1);
    const size_t ch = static_cast<size_t>(v.data.ch);
    for (size_t s = 0; s < pre.v.size(); ++s) pre.v[s] = v.data.v[s * ch];
    Tensor prob = model.predict_prob(pre);
    return threshold_prob(prob, v.spacing, 0.5f);
}

MaskVolume postprocess_roi(const MaskVolume& fibro, int min_component) {
    fibro.validate();
    if (fibro.kind != MaskKind::binary) throw std::invalid_argument("roi input must be binary");
    if (min_component < 1) throw std::invalid_argument("min_component must be >= 1");

    Tens<uint8_t> opened = dilate6(erode6(fibro.data, 1), 1);

    const auto& d = opened.dims;
    Tens<uint8_t> keep(d, 1);
    keep.fill(0);
    std::vector<uint8_t> visited(opened.v.size(), 0);
    const std::array<std::array<int, 3>, 6> nb{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
    std::vector<size_t> comp;
    for (size_t start = 0; start < opened.v.size(); ++start) {
        if (!opened.v[start] || visited[start]) continue;
        comp.clear();
        std::deque<size_t> queue{start};
        visited[start] = 1;
        while (!queue.empty()) {
            const size_t cur = queue.front();
            queue.pop_front();
            comp.push_back(cur);
            const int z = static_cast<int>(cur) % d[2];
            const int y = static_cast<int>(cur / static_cast<size_t>(d[2])) % d[1];
            const int x = static_cast<int>(cur / static_cast<size_t>(d[2]) / static_cast<size_t>(d[1]));
            for (const auto& o : nb) {
                const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                if (nx < 0 || ny < 0 || nz < 0 || nx >= d[0] || ny >= d[1] || nz >= d[2]) continue;
                const size_t ni = (static_cast<size_t>(nx) * static_cast<size_t>(d[1]) +
                                   static_cast<size_t>(ny)) * static_cast<size_t>(d[2]) +
                                  static_cast<size_t>(nz);
                if (opened.v[ni] && !visited[ni]) {
                    visited[ni] = 1;
                    queue.push_back(ni);
                }
            }
        }
        if (comp.size() >= static_cast<size_t>(min_component))
            for (size_t i : comp) keep.v[i] = 1;
    }
    if (count_nonzero(keep) == 0)
        throw EmptyRoiError("no fibroglandular component of at least " +
                            std::to_string(min_component) + " voxels survived post-processing");

    MaskVolume out;
    out.spacing = fibro.spacing;
    out.kind = MaskKind::binary;
    out.data = std::move(keep);
    return out;
}

}  // namespace synbt::tissue
