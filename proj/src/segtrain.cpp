#include "synbt/segtrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

#include "synbt/errors.hpp"
#include "synbt/kernels.hpp"
#include "synbt/metrics.hpp"
#include "synbt/rng.hpp"
#include "synbt/tissueseg.hpp"

namespace synbt::seg {

void SegTrainConfig::validate() const {
    const int div = 1 << levels;
    for (int a = 0; a < 3; ++a) {
        if (window[a] < div || window[a] % div != 0)
            throw std::invalid_argument("window dims must be positive multiples of 2^levels");
    }
    if (window[3] < 1 || window[3] > kern::kMaxChannels)
        throw std::invalid_argument("window channel count out of range");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (!(lr > 0.0f) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (!(synth_fraction >= 0.0 && synth_fraction <= 1.0))
        throw std::invalid_argument("synth_fraction must lie in [0, 1]");
    if (base_width < 1) throw std::invalid_argument("base_width must be >= 1");
    if (levels < 1) throw std::invalid_argument("levels must be >= 1");
}

Tensor SegModel::predict_prob(const Tensor& window2ch) const {
    if (window2ch.ch != cfg.window[3])
        throw std::invalid_argument("window channel count does not match the model");
    Volume wrap;
    wrap.spacing = {1.0, 1.0, 1.0};
    wrap.channel_roles.assign(static_cast<size_t>(window2ch.ch), "image");
    wrap.data = window2ch;
    const int div = 1 << cfg.levels;
    auto [padded, pad] = pad_to_multiple(wrap, {div, div, div});
    Tensor logits = unet.forward(padded.data, 0, nullptr);
    for (auto& x : logits.v) x = 1.0f / (1.0f + std::exp(-x));
    return pad.any() ? strip_pad(logits, pad) : logits;
}

namespace {

// 180-degree or quarter turns in the y-z plane; image and mask move together
template <typename T>
Tens<T> rotate_yz(const Tens<T>& t, int quarter_turns) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    if (k == 0) return t;
    const auto& d = t.dims;
    std::array<int, 3> od = d;
    if (k % 2 == 1) std::swap(od[1], od[2]);
    Tens<T> out(od, t.ch);
    for (int x = 0; x < d[0]; ++x)
        for (int y = 0; y < d[1]; ++y)
            for (int z = 0; z < d[2]; ++z) {
                int ny = y, nz = z;
                if (k == 1) {
                    ny = z;
                    nz = d[1] - 1 - y;
                } else if (k == 2) {
                    ny = d[1] - 1 - y;
                    nz = d[2] - 1 - z;
                } else {
                    ny = d[2] - 1 - z;
                    nz = y;
                }
                for (int c = 0; c < t.ch; ++c) out.at(x, ny, nz, c) = t.at(x, y, z, c);
            }
    return out;
}

template <typename T>
Tens<T> flip_axis(const Tens<T>& t, int axis) {
    Tens<T> out(t.dims, t.ch);
    const auto& d = t.dims;
    for (int x = 0; x < d[0]; ++x)
        for (int y = 0; y < d[1]; ++y)
            for (int z = 0; z < d[2]; ++z) {
                const int sx = axis == 0 ? d[0] - 1 - x : x;
                const int sy = axis == 1 ? d[1] - 1 - y : y;
                const int sz = axis == 2 ? d[2] - 1 - z : z;
                for (int c = 0; c < t.ch; ++c) out.at(x, y, z, c) = t.at(sx, sy, sz, c);
            }
    return out;
}

// Symmetric zero pad of image and mask up to at least the window extent.
void pad_item(Volume& v, MaskVolume& m, std::array<int, 3> target) {
    const auto d = v.data.dims;
    if (d[0] >= target[0] && d[1] >= target[1] && d[2] >= target[2]) return;
    std::array<int, 3> nd, lo;
    for (int a = 0; a < 3; ++a) {
        nd[a] = std::max(d[a], target[a]);
        lo[a] = (nd[a] - d[a]) / 2;
    }
    Tensor nv(nd, v.data.ch);
    Tens<uint8_t> nm(nd, 1);
    nv.fill(0.0f);
    nm.fill(0);
    for (int x = 0; x < d[0]; ++x)
        for (int y = 0; y < d[1]; ++y)
            for (int z = 0; z < d[2]; ++z) {
                for (int c = 0; c < v.data.ch; ++c)
                    nv.at(x + lo[0], y + lo[1], z + lo[2], c) = v.data.at(x, y, z, c);
                nm.at(x + lo[0], y + lo[1], z + lo[2], 0) = m.data.at(x, y, z, 0);
            }
    v.data = std::move(nv);
    m.data = std::move(nm);
}

}  // namespace

void augment_item(Tensor& image, Tens<uint8_t>& mask, const SegTrainConfig& cfg, Rng& rng) {
    if (image.dims != mask.dims) throw std::invalid_argument("image and mask grids disagree");
    if (cfg.aug_flip) {
        for (int axis = 0; axis < 3; ++axis) {
            if (rng.coin(0.5)) {
                image = flip_axis(image, axis);
                mask = flip_axis(mask, axis);
            }
        }
    }
    if (cfg.aug_rotation) {
        const int k = image.dims[1] == image.dims[2] ? static_cast<int>(rng.randint(4))
                                                     : (rng.coin(0.5) ? 2 : 0);
        if (k != 0) {
            image = rotate_yz(image, k);
            mask = rotate_yz(mask, k);
        }
    }
    if (cfg.aug_intensity_scale) {
        const float s = static_cast<float>(rng.uniform(0.9, 1.1));
        for (auto& x : image.v) x *= s;
    }
    if (cfg.aug_intensity_shift) {
        const float o = static_cast<float>(rng.uniform(-0.1, 0.1));
        for (auto& x : image.v) x += o;
    }
}

std::vector<int> window_starts(int dim, int w, int stride) {
    if (dim < 1 || w < 1 || stride < 1) throw std::invalid_argument("bad tiling parameters");
    if (w >= dim) return {0};
    std::vector<int> starts;
    for (int o = 0;; o += stride) {
        if (o + w >= dim) {
            starts.push_back(dim - w);
            break;
        }
        starts.push_back(o);
    }
    return starts;
}

MaskVolume sliding_window_infer(const WindowPredictor& predict, const Volume& v,
                                std::array<int, 4> window, double overlap_frac) {
    v.validate();
    if (!predict) throw std::invalid_argument("predictor is empty");
    if (window[3] != v.data.ch)
        throw std::invalid_argument("window channel count does not match the volume");
    for (int a = 0; a < 3; ++a)
        if (window[a] < 1) throw std::invalid_argument("window dims must be positive");
    if (!(overlap_frac >= 0.0 && overlap_frac < 1.0))
        throw std::invalid_argument("overlap_frac must lie in [0, 1)");

    Volume padded = v;
    MaskVolume dummy;
    dummy.data = Tens<uint8_t>(v.data.dims, 1);
    std::array<int, 3> lo{0, 0, 0};
    {
        const auto before = v.data.dims;
        pad_item(padded, dummy, {window[0], window[1], window[2]});
        for (int a = 0; a < 3; ++a) lo[a] = (padded.data.dims[a] - before[a]) / 2;
    }

    const auto& d = padded.data.dims;
    std::array<std::vector<int>, 3> starts;
    for (int a = 0; a < 3; ++a) {
        const int stride = std::max(1, static_cast<int>(std::llround(window[a] * (1.0 - overlap_frac))));
        starts[a] = window_starts(d[a], window[a], stride);
    }

    Tens<double> acc(d, 1);
    Tens<int32_t> cover(d, 1);
    acc.fill(0.0);
    cover.fill(0);
    Tensor win({window[0], window[1], window[2]}, v.data.ch);
    for (int sx : starts[0])
        for (int sy : starts[1])
            for (int sz : starts[2]) {
                for (int x = 0; x < window[0]; ++x)
                    for (int y = 0; y < window[1]; ++y)
                        for (int z = 0; z < window[2]; ++z)
                            for (int c = 0; c < v.data.ch; ++c)
                                win.at(x, y, z, c) = padded.data.at(sx + x, sy + y, sz + z, c);
                Tensor prob = predict(win);
                if (prob.dims != win.dims || prob.ch != 1)
                    throw std::invalid_argument("predictor output grid mismatch");
                for (int x = 0; x < window[0]; ++x)
                    for (int y = 0; y < window[1]; ++y)
                        for (int z = 0; z < window[2]; ++z) {
                            acc.at(sx + x, sy + y, sz + z, 0) +=
                                static_cast<double>(prob.at(x, y, z, 0));
                            cover.at(sx + x, sy + y, sz + z, 0) += 1;
                        }
            }

    MaskVolume out;
    out.spacing = v.spacing;
    out.kind = MaskKind::binary;
    out.data = Tens<uint8_t>(v.data.dims, 1);
    for (int x = 0; x < v.data.dims[0]; ++x)
        for (int y = 0; y < v.data.dims[1]; ++y)
            for (int z = 0; z < v.data.dims[2]; ++z) {
                const int32_t n = cover.at(x + lo[0], y + lo[1], z + lo[2], 0);
                const double p = acc.at(x + lo[0], y + lo[1], z + lo[2], 0) / n;
                out.data.at(x, y, z, 0) = p > 0.5 ? 1 : 0;
            }
    return out;
}

MaskVolume sliding_window_infer(const SegModel& model, const Volume& v, double overlap_frac) {
    return sliding_window_infer([&](const Tensor& w) { return model.predict_prob(w); }, v,
                                model.cfg.window, overlap_frac);
}

SegModel train_segmentation(const std::vector<Volume>& vols,
                            const std::vector<MaskVolume>& tumors,
                            const SynthGenerator& synth_gen,
                            const SegTrainConfig& cfg,
                            SegTrainStats* stats) {
    cfg.validate();
    if (vols.empty()) throw std::invalid_argument("training set is empty");
    if (vols.size() != tumors.size())
        throw std::invalid_argument("volume and tumor mask counts disagree");
    for (size_t i = 0; i < vols.size(); ++i) {
        vols[i].validate();
        tumors[i].validate();
        if (tumors[i].kind != MaskKind::binary)
            throw std::invalid_argument("tumor masks must be binary");
        if (tumors[i].data.dims != vols[i].data.dims)
            throw std::invalid_argument("tumor mask and volume are on different grids");
        if (vols[i].data.ch != cfg.window[3])
            throw std::invalid_argument("volume channel count does not match the window");
    }
    if (cfg.synth_fraction > 0.0 && !synth_gen)
        throw std::invalid_argument("synth_fraction > 0 needs a generator");

    const size_t n = vols.size();
    const size_t n_val = std::max<size_t>(1, n / 5);
    const size_t n_train = n > n_val ? n - n_val : n;  // tiny sets validate on themselves
    std::vector<size_t> train_ids(n_train), val_ids;
    std::iota(train_ids.begin(), train_ids.end(), 0);
    for (size_t i = (n > n_val ? n_train : 0); i < n; ++i) val_ids.push_back(i);

    SegModel model;
    model.cfg = cfg;
    Rng rng(Rng::derive(cfg.seed, "seg-train"));
    model.unet.init(cfg.window[3], 1, cfg.base_width, cfg.levels, 0, true, 0.0f, rng);
    auto params = model.unet.params();
    nn::Adam opt;
    opt.lr = cfg.lr;

    const uint64_t synth_root = Rng::derive(cfg.seed, "seg-synth");
    std::map<uint64_t, std::pair<Volume, MaskVolume>> synth_cache;

    std::vector<std::vector<float>> best_params;
    double best_dice = -1.0;
    int best_epoch = -1;
    const std::array<int, 3> wsz{cfg.window[0], cfg.window[1], cfg.window[2]};

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order = train_ids;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        int in_batch = 0;
        nn::zero_grads(params);
        auto flush = [&]() {
            if (in_batch == 0) return;
            if (in_batch > 1)
                for (nn::Param* p : params)
                    kern::ops().scale(1.0f / static_cast<float>(in_batch), p->grad.data(),
                                      p->grad.size());
            opt.update(params);
            nn::zero_grads(params);
            in_batch = 0;
        };

        for (size_t slot = 0; slot < order.size(); ++slot) {
            const bool want_synth = cfg.synth_fraction > 0.0 && rng.coin(cfg.synth_fraction);
            const uint64_t crop_seed = rng.next_u64();

            const Volume* v = &vols[order[slot]];
            const MaskVolume* m = &tumors[order[slot]];
            std::pair<Volume, MaskVolume> synth_item;
            if (want_synth) {
                if (stats) stats->synth_requested++;
                // slot-keyed: the synthetic pool repeats across epochs, so
                // memoization (or precomputation) cannot change the stream
                const uint64_t s = Rng::derive(synth_root, slot);
                try {
                    if (cfg.cache_synth) {
                        auto it = synth_cache.find(s);
                        if (it == synth_cache.end())
                            it = synth_cache.emplace(s, synth_gen(s)).first;
                        synth_item = it->second;
                    } else {
                        synth_item = synth_gen(s);
                    }
                    synth_item.first.validate();
                    if (synth_item.second.data.dims != synth_item.first.data.dims)
                        throw std::invalid_argument("generator mask grid mismatch");
                    v = &synth_item.first;
                    m = &synth_item.second;
                } catch (const PlacementInfeasibleError&) {
                    if (stats) stats->synth_failures++;  // fall back to the real item
                }
            }

            Volume item_v = *v;
            MaskVolume item_m = *m;
            pad_item(item_v, item_m, wsz);
            auto [cv, cm] = random_crop(item_v, item_m, wsz, crop_seed);
            augment_item(cv.data, cm.data, cfg, rng);

            nn::UNet3d::Cache cache;
            Tensor logits = model.unet.forward(cv.data, 0, &cache);
            Tensor dlog;
            const double loss = tissue::dice_bce_loss(logits, cm.data, &dlog);
            if (!std::isfinite(loss))
                throw NumericalFailureError("segmentation loss diverged at epoch " +
                                            std::to_string(epoch));
            model.unet.backward(cache, dlog);
            epoch_loss += loss;
            if (++in_batch == cfg.batch) flush();
        }
        flush();
        if (stats) stats->train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

        double dsum = 0.0;
        for (size_t vi : val_ids) {
            MaskVolume pred = sliding_window_infer(
                [&](const Tensor& w) {
                    Tensor logit = model.unet.forward(w, 0, nullptr);
                    for (auto& x : logit.v) x = 1.0f / (1.0f + std::exp(-x));
                    return logit;
                },
                vols[vi], cfg.window, 0.25);
            dsum += dice(pred, tumors[vi]);
        }
        const double vdice = dsum / static_cast<double>(val_ids.size());
        if (stats) stats->val_dice.push_back(vdice);
        if (vdice > best_dice) {
            best_dice = vdice;
            best_epoch = epoch;
            best_params.clear();
            for (const nn::Param* p : params) best_params.push_back(p->val);
        }
    }

    if (best_epoch >= 0) {
        for (size_t i = 0; i < params.size(); ++i) params[i]->val = best_params[i];
        if (stats) {
            stats->best_epoch = best_epoch;
            stats->best_val_dice = best_dice;
        }
    }
    model.trained = cfg.epochs > 0;
    return model;
}

}  // namespace synbt::seg
