#include "synbt/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "synbt/filters.hpp"
#include "synbt/rng.hpp"

namespace synbt {

void PhantomSpec::validate() const {
    if (size[0] < 4 || size[1] < 4 || size[2] < 4)
        throw std::invalid_argument("phantom size must be at least 4 per axis");
    if (breast_axes[0] <= 0 || breast_axes[1] <= 0 || breast_axes[2] <= 0)
        throw std::invalid_argument("breast semi-axes must be positive");
    if (!(fibro_fraction > 0.0 && fibro_fraction < 1.0))
        throw std::invalid_argument("fibro_fraction must lie in (0,1)");
    if (tumor_count < 0) throw std::invalid_argument("tumor_count must be >= 0");
    if (!(tumor_radius_range[0] > 0.0 && tumor_radius_range[0] <= tumor_radius_range[1]))
        throw std::invalid_argument("tumor radius range must satisfy 0 < lo <= hi");
    const double min_axis = std::min({breast_axes[0], breast_axes[1], breast_axes[2]});
    if (tumor_count > 0 && tumor_radius_range[1] > min_axis)
        throw std::invalid_argument("tumor radius exceeds breast semi-axes");
    if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
    if (!(enhancement_gain > 1.0)) throw std::invalid_argument("enhancement_gain must exceed 1");
}

namespace {

// White noise box-blurred into a smooth field, then squashed to roughly
// [-1, 1] (standardized, halved, clamped).
Tensor smooth_unit_field(std::array<int, 3> dims, Rng& rng) {
    Tensor t(dims, 1);
    fill_normal(t.v.data(), t.numel(), rng);
    t = box_blur(t, 2, 2);
    double s = 0.0, s2 = 0.0;
    for (float x : t.v) {
        s += x;
        s2 += static_cast<double>(x) * x;
    }
    const double n = static_cast<double>(t.v.size());
    const double mean = s / n;
    const double sd = std::sqrt(std::max(1e-12, s2 / n - mean * mean));
    for (float& x : t.v)
        x = static_cast<float>(std::clamp((x - mean) / sd * 0.5, -1.0, 1.0));
    return t;
}

Tens<uint8_t> breast_mask(const PhantomSpec& spec) {
    Tens<uint8_t> m(spec.size, 1);
    const double cy = (spec.size[1] - 1) / 2.0;
    const double cz = (spec.size[2] - 1) / 2.0;
    for (int x = 0; x < spec.size[0]; ++x)
        for (int y = 0; y < spec.size[1]; ++y)
            for (int z = 0; z < spec.size[2]; ++z) {
                const double dx = x / spec.breast_axes[0];
                const double dy = (y - cy) / spec.breast_axes[1];
                const double dz = (z - cz) / spec.breast_axes[2];
                m.at(x, y, z, 0) = dx * dx + dy * dy + dz * dz <= 1.0 ? 1 : 0;
            }
    return m;
}

Tens<uint8_t> pick_fibro(const Tens<uint8_t>& breast, const Tensor& field, double fraction) {
    std::vector<float> inside;
    for (size_t i = 0; i < breast.v.size(); ++i)
        if (breast.v[i]) inside.push_back(field.v[i]);
    if (inside.empty()) throw std::invalid_argument("breast ellipsoid covers no voxels");
    std::sort(inside.begin(), inside.end(), std::greater<float>());
    const size_t target = std::max<size_t>(
        1, static_cast<size_t>(std::lround(fraction * static_cast<double>(inside.size()))));
    // taking the top-k of a smooth field keeps the region blobby; widen the
    // cut if dropping smaller components loses too much volume
    for (double mult : {1.0, 1.15, 1.3, 1.5}) {
        const size_t k = std::min(inside.size(), static_cast<size_t>(
                                                    std::lround(static_cast<double>(target) * mult)));
        const float thr = inside[k - 1];
        Tens<uint8_t> cand(breast.dims, 1);
        for (size_t i = 0; i < breast.v.size(); ++i)
            cand.v[i] = breast.v[i] && field.v[i] >= thr ? 1 : 0;
        cand = largest_component6(cand);
        if (static_cast<double>(count_nonzero(cand)) >= 0.8 * static_cast<double>(target))
            return cand;
    }
    // last resort: accept the widest cut even if fragmented
    const float thr = inside[std::min(inside.size() - 1, target * 3 / 2)];
    Tens<uint8_t> cand(breast.dims, 1);
    for (size_t i = 0; i < breast.v.size(); ++i)
        cand.v[i] = breast.v[i] && field.v[i] >= thr ? 1 : 0;
    return largest_component6(cand);
}

void add_tumor(Tens<uint8_t>& tumor, const Tens<uint8_t>& fibro, const Tensor& perturb,
               const PhantomSpec& spec, Rng& rng) {
    std::vector<size_t> fibro_sites;
    for (size_t i = 0; i < fibro.v.size(); ++i)
        if (fibro.v[i]) fibro_sites.push_back(i);
    if (fibro_sites.empty()) return;  // nothing to place into
    const size_t pick = static_cast<size_t>(rng.randint(static_cast<int64_t>(fibro_sites.size())));
    const size_t ci = fibro_sites[pick];
    const int cz = static_cast<int>(ci % fibro.dims[2]);
    const int cy = static_cast<int>(ci / fibro.dims[2] % fibro.dims[1]);
    const int cx = static_cast<int>(ci / fibro.dims[2] / fibro.dims[1]);

    const double r = rng.uniform(spec.tumor_radius_range[0], spec.tumor_radius_range[1]);
    std::array<double, 3> axes;
    for (auto& a : axes) a = r * rng.uniform(0.85, 1.2);
    const double reach = *std::max_element(axes.begin(), axes.end()) * 1.3 + 1.0;

    Tens<uint8_t> cand(fibro.dims, 1);
    const int lo[3] = {std::max(0, cx - static_cast<int>(reach)),
                       std::max(0, cy - static_cast<int>(reach)),
                       std::max(0, cz - static_cast<int>(reach))};
    const int hi[3] = {std::min(fibro.dims[0] - 1, cx + static_cast<int>(reach)),
                       std::min(fibro.dims[1] - 1, cy + static_cast<int>(reach)),
                       std::min(fibro.dims[2] - 1, cz + static_cast<int>(reach))};
    for (int x = lo[0]; x <= hi[0]; ++x)
        for (int y = lo[1]; y <= hi[1]; ++y)
            for (int z = lo[2]; z <= hi[2]; ++z) {
                const double dx = (x - cx) / axes[0];
                const double dy = (y - cy) / axes[1];
                const double dz = (z - cz) / axes[2];
                const double rad = std::sqrt(dx * dx + dy * dy + dz * dz);
                const double wobble = 1.0 + 0.25 * perturb.at(x, y, z, 0);
                cand.at(x, y, z, 0) = (rad <= wobble && fibro.at(x, y, z, 0)) ? 1 : 0;
            }
    cand = largest_component6(cand);
    for (size_t i = 0; i < tumor.v.size(); ++i)
        if (cand.v[i]) tumor.v[i] = 1;
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);

    const Tens<uint8_t> breast = breast_mask(spec);
    const Tensor fib_field = smooth_unit_field(spec.size, rng);
    const Tensor tissue_tex = smooth_unit_field(spec.size, rng);
    const Tensor fibro_tex = smooth_unit_field(spec.size, rng);
    const Tensor mild_field = smooth_unit_field(spec.size, rng);
    const Tensor perturb = smooth_unit_field(spec.size, rng);

    Phantom out;
    out.fibro.data = pick_fibro(breast, fib_field, spec.fibro_fraction);
    out.tumor.data = Tens<uint8_t>(spec.size, 1);
    for (int t = 0; t < spec.tumor_count; ++t)
        add_tumor(out.tumor.data, out.fibro.data, perturb, spec, rng);

    out.vol.data = Tensor(spec.size, 2);
    out.vol.channel_roles = {"pre", "post"};
    const float gain = static_cast<float>(spec.enhancement_gain);
    for (int x = 0; x < spec.size[0]; ++x)
        for (int y = 0; y < spec.size[1]; ++y)
            for (int z = 0; z < spec.size[2]; ++z) {
                float pre;
                float post_factor = 1.0f;
                if (out.fibro.data.at(x, y, z, 0)) {
                    pre = static_cast<float>(0.62 * (1.0 + 0.12 * fibro_tex.at(x, y, z, 0)));
                    if (out.tumor.data.at(x, y, z, 0)) {
                        post_factor = gain;
                    } else {
                        // mild heterogeneous enhancement of healthy fibroglandular tissue
                        const double m = 0.375 + 0.175 * mild_field.at(x, y, z, 0);
                        post_factor = static_cast<float>(1.0 + m * (spec.enhancement_gain - 1.0));
                    }
                } else if (breast.at(x, y, z, 0)) {
                    pre = static_cast<float>(0.35 * (1.0 + 0.15 * tissue_tex.at(x, y, z, 0)));
                } else {
                    pre = 0.03f;
                }
                out.vol.data.at(x, y, z, 0) = pre;
                out.vol.data.at(x, y, z, 1) = pre * post_factor;
            }

    if (spec.noise_sigma > 0.0) {
        const double s = spec.noise_sigma;
        for (size_t i = 0; i < out.vol.data.v.size(); ++i)
            out.vol.data.v[i] += static_cast<float>(s * rng.normal());
    }
    return out;
}

MaskVolume kmeans_labels(const Volume& v, int k, uint64_t seed) {
    v.validate();
    if (v.data.ch != 1) throw std::invalid_argument("kmeans_labels needs a single-channel volume");
    if (k < 2 || k > 8) throw std::invalid_argument("k must lie in [2, 8]");

    const std::vector<float>& vals = v.data.v;
    {
        std::vector<float> uniq = vals;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        k = std::min<int>(k, static_cast<int>(uniq.size()));
    }

    Rng rng(seed);
    std::vector<double> centers;
    centers.push_back(vals[static_cast<size_t>(rng.randint(static_cast<int64_t>(vals.size())))]);
    std::vector<double> d2(vals.size());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (size_t i = 0; i < vals.size(); ++i) {
            double best = 1e300;
            for (double c : centers) {
                const double d = vals[i] - c;
                best = std::min(best, d * d);
            }
            d2[i] = best;
            total += best;
        }
        const double r = rng.uniform() * total;
        double cum = 0.0;
        size_t pick = vals.size() - 1;
        for (size_t i = 0; i < vals.size(); ++i) {
            cum += d2[i];
            if (cum >= r && d2[i] > 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(vals[pick]);
    }

    std::vector<int> assign(vals.size(), 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < vals.size(); ++i) {
            int best = 0;
            double bd = 1e300;
            for (int c = 0; c < k; ++c) {
                const double d = vals[i] - centers[static_cast<size_t>(c)];
                if (d * d < bd) {
                    bd = d * d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<double> sum(static_cast<size_t>(k), 0.0);
        std::vector<size_t> cnt(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < vals.size(); ++i) {
            sum[static_cast<size_t>(assign[i])] += vals[i];
            ++cnt[static_cast<size_t>(assign[i])];
        }
        for (int c = 0; c < k; ++c) {
            if (cnt[static_cast<size_t>(c)] > 0) {
                centers[static_cast<size_t>(c)] =
                    sum[static_cast<size_t>(c)] / static_cast<double>(cnt[static_cast<size_t>(c)]);
            } else {
                // reseed an empty cluster on the point farthest from its center
                size_t far = 0;
                double fd = -1.0;
                for (size_t i = 0; i < vals.size(); ++i) {
                    const double d = vals[i] - centers[static_cast<size_t>(assign[i])];
                    if (d * d > fd) {
                        fd = d * d;
                        far = i;
                    }
                }
                centers[static_cast<size_t>(c)] = vals[far];
                changed = true;
            }
        }
        if (!changed) break;
    }

    // relabel 1..k by ascending center so outputs are stable across runs
    std::vector<int> order(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) order[static_cast<size_t>(c)] = c;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return centers[static_cast<size_t>(a)] < centers[static_cast<size_t>(b)]; });
    std::vector<double> sorted_centers(static_cast<size_t>(k));
    for (int rank = 0; rank < k; ++rank)
        sorted_centers[static_cast<size_t>(rank)] = centers[static_cast<size_t>(order[static_cast<size_t>(rank)])];

    MaskVolume out;
    out.kind = MaskKind::label;
    out.spacing = v.spacing;
    out.data = Tens<uint8_t>(v.data.dims, 1);
    for (size_t i = 0; i < vals.size(); ++i) {
        int best = 0;
        double bd = 1e300;
        for (int c = 0; c < k; ++c) {
            const double d = vals[i] - sorted_centers[static_cast<size_t>(c)];
            if (d * d < bd) {
                bd = d * d;
                best = c;
            }
        }
        out.data.v[i] = static_cast<uint8_t>(best + 1);
    }
    return out;
}

Volume gmm_render(const MaskVolume& labels, uint64_t seed, double sigma_override,
                  std::vector<double>* out_means) {
    labels.validate();
    std::vector<uint8_t> present;
    {
        std::vector<bool> seen(256, false);
        for (uint8_t l : labels.data.v) seen[l] = true;
        for (int l = 0; l < 256; ++l)
            if (seen[static_cast<size_t>(l)]) present.push_back(static_cast<uint8_t>(l));
    }
    if (present.size() < 2)
        throw std::invalid_argument("label map must contain at least two labels");

    Rng rng(seed);
    std::array<double, 256> mean{}, sigma{};
    for (uint8_t l : present) {
        mean[l] = rng.uniform(-1.0, 1.0);
        sigma[l] = sigma_override >= 0.0 ? sigma_override : rng.uniform(0.01, 0.15);
    }
    if (out_means) {
        out_means->assign(static_cast<size_t>(present.back()) + 1, 0.0);
        for (uint8_t l : present) (*out_means)[l] = mean[l];
    }

    Tensor noise(labels.data.dims, 1);
    for (auto& x : noise.v) x = static_cast<float>(std::clamp(rng.normal(), -4.0, 4.0));
    noise = blur3(noise, 1);

    Volume out;
    out.spacing = labels.spacing;
    out.channel_roles = {"image"};
    out.data = Tensor(labels.data.dims, 1);
    for (size_t i = 0; i < out.data.v.size(); ++i) {
        const uint8_t l = labels.data.v[i];
        out.data.v[i] = static_cast<float>(mean[l] + sigma[l] * noise.v[i]);
    }
    return out;
}

}  // namespace synbt
