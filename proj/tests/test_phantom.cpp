#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "synbt/phantom.hpp"
#include "synbt/rng.hpp"
#include "synbt/volume.hpp"

using namespace synbt;

namespace {

Tens<uint8_t> analytic_breast(const PhantomSpec& spec) {
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

}  // namespace

TEST_SUITE("phantom") {

TEST_CASE("tumor_count 0 gives an empty tumor mask and enhancement only in fibro tissue") {
    PhantomSpec spec;
    spec.tumor_count = 0;
    spec.noise_sigma = 0.0;
    const Phantom ph = generate_phantom(spec, 101);
    CHECK(count_nonzero(ph.tumor.data) == 0);
    for (size_t s = 0; s < ph.vol.data.sites(); ++s) {
        const float pre = ph.vol.data.v[s * 2 + 0];
        const float post = ph.vol.data.v[s * 2 + 1];
        if (ph.fibro.data.v[s]) {
            CHECK(post > pre);  // mild enhancement is strictly positive
        } else {
            CHECK(post == pre);
        }
    }
}

TEST_CASE("noise-free tumors enhance by exactly the configured gain") {
    PhantomSpec spec;
    spec.tumor_count = 1;
    spec.noise_sigma = 0.0;
    const Phantom ph = generate_phantom(spec, 102);
    REQUIRE(count_nonzero(ph.tumor.data) > 0);
    const float gain = static_cast<float>(spec.enhancement_gain);
    for (size_t s = 0; s < ph.vol.data.sites(); ++s)
        if (ph.tumor.data.v[s])
            CHECK(ph.vol.data.v[s * 2 + 1] == ph.vol.data.v[s * 2 + 0] * gain);
}

TEST_CASE("fibro fraction lands near the requested occupancy") {
    PhantomSpec spec;
    spec.size = {64, 64, 64};
    spec.breast_axes = {56, 30, 30};
    spec.fibro_fraction = 0.2;
    spec.tumor_count = 0;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        const Phantom ph = generate_phantom(spec, seed);
        const auto breast = analytic_breast(spec);
        const double frac = static_cast<double>(count_nonzero(ph.fibro.data)) /
                            static_cast<double>(count_nonzero(breast));
        CHECK(frac > 0.16);
        CHECK(frac < 0.24);
    }
}

TEST_CASE("tumor, fibro and breast masks nest properly") {
    PhantomSpec spec;
    spec.tumor_count = 2;
    for (uint64_t seed : {7ull, 8ull, 9ull}) {
        const Phantom ph = generate_phantom(spec, seed);
        const auto breast = analytic_breast(spec);
        for (size_t i = 0; i < ph.tumor.data.v.size(); ++i) {
            if (ph.tumor.data.v[i]) CHECK(ph.fibro.data.v[i] == 1);
            if (ph.fibro.data.v[i]) CHECK(breast.v[i] == 1);
        }
        CHECK(count_nonzero(ph.tumor.data) > 0);
        CHECK(count_nonzero(ph.fibro.data) > count_nonzero(ph.tumor.data));
    }
}

TEST_CASE("fibro region is a single connected component") {
    PhantomSpec spec;
    const Phantom ph = generate_phantom(spec, 11);
    const auto lc = largest_component6(ph.fibro.data);
    CHECK(lc.v == ph.fibro.data.v);
}

TEST_CASE("generation is byte-identical per (spec, seed)") {
    PhantomSpec spec;
    const Phantom a = generate_phantom(spec, 55);
    const Phantom b = generate_phantom(spec, 55);
    CHECK(a.vol.data.v == b.vol.data.v);
    CHECK(a.fibro.data.v == b.fibro.data.v);
    CHECK(a.tumor.data.v == b.tumor.data.v);
    const Phantom c = generate_phantom(spec, 56);
    CHECK(a.vol.data.v != c.vol.data.v);
}

TEST_CASE("infeasible or malformed specs are rejected") {
    PhantomSpec spec;
    spec.tumor_radius_range = {25.0, 30.0};  // exceeds the smallest semi-axis (20)
    CHECK_THROWS_AS(generate_phantom(spec, 1), std::invalid_argument);
    spec = PhantomSpec{};
    spec.fibro_fraction = 1.5;
    CHECK_THROWS_AS(generate_phantom(spec, 1), std::invalid_argument);
    spec = PhantomSpec{};
    spec.enhancement_gain = 1.0;
    CHECK_THROWS_AS(generate_phantom(spec, 1), std::invalid_argument);
    spec = PhantomSpec{};
    spec.noise_sigma = -0.1;
    CHECK_THROWS_AS(generate_phantom(spec, 1), std::invalid_argument);
}

TEST_CASE("kmeans bipartitions a two-valued image exactly") {
    Volume v;
    v.data = Tensor({8, 8, 8}, 1);
    v.channel_roles = {"image"};
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y)
            for (int z = 0; z < 8; ++z) v.data.at(x, y, z, 0) = x < 4 ? 0.2f : 0.7f;
    const MaskVolume labels = kmeans_labels(v, 2, 9);
    CHECK(labels.kind == MaskKind::label);
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y)
            for (int z = 0; z < 8; ++z)
                CHECK(labels.data.at(x, y, z, 0) == (x < 4 ? 1 : 2));  // ascending by mean
}

TEST_CASE("kmeans recovers three well-separated gaussian modes") {
    Volume v;
    v.data = Tensor({12, 12, 12}, 1);
    v.channel_roles = {"image"};
    const double blob_means[3] = {-0.8, 0.0, 0.8};
    Rng rng(77);
    for (int x = 0; x < 12; ++x)
        for (int y = 0; y < 12; ++y)
            for (int z = 0; z < 12; ++z)
                v.data.at(x, y, z, 0) =
                    static_cast<float>(rng.normal(blob_means[x / 4], 0.05));
    const MaskVolume labels = kmeans_labels(v, 3, 10);
    std::map<int, std::pair<double, size_t>> acc;
    for (size_t i = 0; i < labels.data.v.size(); ++i) {
        auto& [sum, n] = acc[labels.data.v[i]];
        sum += v.data.v[i];
        ++n;
    }
    REQUIRE(acc.size() == 3);
    int want = 0;
    for (const auto& [label, stat] : acc) {
        CHECK(std::abs(stat.first / static_cast<double>(stat.second) - blob_means[want]) < 0.05);
        ++want;
    }
}

TEST_CASE("kmeans reduces k when the image has fewer distinct values") {
    Volume v;
    v.data = Tensor({4, 4, 4}, 1);
    v.channel_roles = {"image"};
    for (size_t i = 0; i < v.data.v.size(); ++i) v.data.v[i] = i % 2 ? 0.1f : 0.9f;
    const MaskVolume labels = kmeans_labels(v, 5, 11);
    uint8_t mx = 0;
    for (uint8_t l : labels.data.v) mx = std::max(mx, l);
    CHECK(mx == 2);
}

TEST_CASE("kmeans rejects out-of-range k and multi-channel input") {
    Volume v;
    v.data = Tensor({4, 4, 4}, 1);
    v.channel_roles = {"image"};
    CHECK_THROWS_AS(kmeans_labels(v, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(kmeans_labels(v, 9, 0), std::invalid_argument);
    Volume v2;
    v2.data = Tensor({4, 4, 4}, 2);
    v2.channel_roles = {"pre", "post"};
    CHECK_THROWS_AS(kmeans_labels(v2, 2, 0), std::invalid_argument);
}

TEST_CASE("gmm_render with sigma forced to zero is piecewise constant") {
    MaskVolume labels;
    labels.kind = MaskKind::label;
    labels.data = Tens<uint8_t>({9, 9, 9}, 1);
    for (int x = 0; x < 9; ++x)
        for (int y = 0; y < 9; ++y)
            for (int z = 0; z < 9; ++z) labels.data.at(x, y, z, 0) = static_cast<uint8_t>(x / 3);
    std::vector<double> means;
    const Volume img = gmm_render(labels, 21, 0.0, &means);
    REQUIRE(means.size() == 3);
    for (size_t i = 0; i < img.data.v.size(); ++i)
        CHECK(img.data.v[i] == static_cast<float>(means[labels.data.v[i]]));
    CHECK(means[0] != means[1]);
    CHECK(means[1] != means[2]);
}

TEST_CASE("gmm_render per-label sample means track the assigned means") {
    MaskVolume labels;
    labels.kind = MaskKind::label;
    labels.data = Tens<uint8_t>({16, 16, 16}, 1);
    for (int x = 0; x < 16; ++x)
        for (int y = 0; y < 16; ++y)
            for (int z = 0; z < 16; ++z) labels.data.at(x, y, z, 0) = x < 8 ? 0 : 1;
    std::vector<double> means;
    const Volume img = gmm_render(labels, 22, -1.0, &means);
    double sum[2] = {0, 0};
    size_t n[2] = {0, 0};
    for (size_t i = 0; i < img.data.v.size(); ++i) {
        sum[labels.data.v[i]] += img.data.v[i];
        ++n[labels.data.v[i]];
    }
    for (int l = 0; l < 2; ++l)
        CHECK(std::abs(sum[l] / static_cast<double>(n[l]) - means[static_cast<size_t>(l)]) < 0.05);
}

TEST_CASE("gmm_render stays inside [-1.6, 1.6] and is deterministic") {
    MaskVolume labels;
    labels.kind = MaskKind::label;
    labels.data = Tens<uint8_t>({10, 10, 10}, 1);
    for (size_t i = 0; i < labels.data.v.size(); ++i)
        labels.data.v[i] = static_cast<uint8_t>(i % 4);
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        const Volume img = gmm_render(labels, seed);
        for (float x : img.data.v) {
            CHECK(x >= -1.6f);
            CHECK(x <= 1.6f);
        }
    }
    const Volume a = gmm_render(labels, 5);
    const Volume b = gmm_render(labels, 5);
    CHECK(a.data.v == b.data.v);
}

TEST_CASE("gmm_render rejects a single-label map") {
    MaskVolume labels;
    labels.kind = MaskKind::label;
    labels.data = Tens<uint8_t>({4, 4, 4}, 1);
    CHECK_THROWS_AS(gmm_render(labels, 0), std::invalid_argument);
}

}  // TEST_SUITE
