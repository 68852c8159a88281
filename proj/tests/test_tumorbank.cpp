#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include "synbt/errors.hpp"
#include "synbt/phantom.hpp"
#include "synbt/rng.hpp"
#include "synbt/tumorbank.hpp"

using namespace synbt;

namespace {

MaskVolume blank_mask(std::array<int, 3> dims) {
    MaskVolume m;
    m.data = Tens<uint8_t>(dims, 1);
    return m;
}

bank::TumorTemplate cube_template(int side) {
    bank::TumorTemplate t;
    t.mask = Tens<uint8_t>({side, side, side}, 1);
    t.mask.fill(1);
    t.source_id = "test";
    t.volume_voxels = static_cast<int64_t>(side) * side * side;
    return t;
}

// Small asymmetric L: distinguishes every axis permutation from identity.
bank::TumorTemplate l_template() {
    bank::TumorTemplate t;
    t.mask = Tens<uint8_t>({4, 3, 2}, 1);
    for (int x = 0; x < 4; ++x) t.mask.at(x, 0, 0, 0) = 1;
    for (int y = 0; y < 3; ++y) t.mask.at(0, y, 0, 0) = 1;
    t.mask.at(0, 0, 1, 0) = 1;
    t.source_id = "L";
    t.volume_voxels = static_cast<int64_t>(count_nonzero(t.mask));
    return t;
}

// All exact 90-degree grid rotations about one principal axis (both
// directions), used as the oracle family for the rotation test.
Tens<uint8_t> rot90(const Tens<uint8_t>& m, int axis, bool clockwise) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    std::array<int, 3> od = m.dims;
    std::swap(od[a1], od[a2]);
    Tens<uint8_t> out(od, 1);
    std::array<int, 3> p{};
    for (p[0] = 0; p[0] < od[0]; ++p[0])
        for (p[1] = 0; p[1] < od[1]; ++p[1])
            for (p[2] = 0; p[2] < od[2]; ++p[2]) {
                std::array<int, 3> q = p;
                if (clockwise) {
                    q[a1] = p[a2];
                    q[a2] = m.dims[a2] - 1 - p[a1];
                } else {
                    q[a1] = m.dims[a1] - 1 - p[a2];
                    q[a2] = p[a1];
                }
                out.at(p[0], p[1], p[2], 0) = m.at(q[0], q[1], q[2], 0);
            }
    return out;
}

bool same_mask(const Tens<uint8_t>& a, const Tens<uint8_t>& b) {
    return a.dims == b.dims && a.v == b.v;
}

// City-block distance transform oracle, independent of the dilation helpers.
bool within_l1(const Tens<uint8_t>& m, int x, int y, int z, int r) {
    for (int a = std::max(0, x - r); a < std::min(m.dims[0], x + r + 1); ++a)
        for (int b = std::max(0, y - r); b < std::min(m.dims[1], y + r + 1); ++b)
            for (int c = std::max(0, z - r); c < std::min(m.dims[2], z + r + 1); ++c)
                if (m.at(a, b, c, 0) &&
                    std::abs(a - x) + std::abs(b - y) + std::abs(c - z) <= r)
                    return true;
    return false;
}

MaskVolume breast_of(const Volume& v) {
    MaskVolume m;
    m.data = Tens<uint8_t>(v.data.dims, 1);
    m.spacing = v.spacing;
    for (size_t s = 0; s < m.data.v.size(); ++s)
        m.data.v[s] = v.data.v[s * static_cast<size_t>(v.data.ch)] > 0.17f ? 1 : 0;
    return m;
}

}  // namespace

TEST_SUITE("tumorbank") {

TEST_CASE("bank harvesting crops one template per connected component") {
    MaskVolume cube = blank_mask({9, 9, 9});
    for (int x = 2; x < 7; ++x)
        for (int y = 2; y < 7; ++y)
            for (int z = 2; z < 7; ++z) cube.data.at(x, y, z, 0) = 1;

    const std::vector<bank::TumorTemplate> one = bank::build_bank({cube});
    REQUIRE(one.size() == 1);
    CHECK(one[0].mask.dims == std::array<int, 3>{5, 5, 5});
    CHECK(one[0].volume_voxels == 125);
    for (uint8_t v : one[0].mask.v) CHECK(v == 1);

    // two blobs separated by empty space become two templates
    MaskVolume two = blank_mask({10, 6, 6});
    two.data.at(1, 1, 1, 0) = 1;
    two.data.at(1, 2, 1, 0) = 1;
    for (int x = 6; x < 9; ++x) two.data.at(x, 3, 3, 0) = 1;
    const std::vector<bank::TumorTemplate> pair = bank::build_bank({two});
    REQUIRE(pair.size() == 2);
    CHECK(pair[0].volume_voxels + pair[1].volume_voxels == 5);
    CHECK(pair[0].source_id != pair[1].source_id);

    // duplicates are kept, empties are skipped but counted
    int skipped = -1;
    const std::vector<bank::TumorTemplate> dup =
        bank::build_bank({cube, blank_mask({4, 4, 4}), cube}, &skipped);
    CHECK(dup.size() == 2);
    CHECK(skipped == 1);
    CHECK(same_mask(dup[0].mask, dup[1].mask));

    CHECK_THROWS_AS(bank::build_bank({blank_mask({4, 4, 4})}), std::invalid_argument);
    CHECK_THROWS_AS(bank::build_bank({}), std::invalid_argument);
}

TEST_CASE("identity augmentation settings leave the template untouched") {
    bank::PlacementConfig cfg;
    cfg.flip_prob = 0.0;
    cfg.rotation_range = {0.0, 0.0};
    cfg.zoom_range = {1.0, 1.0};

    const bank::TumorTemplate t = l_template();
    for (uint64_t seed : {0ull, 7ull, 42ull}) {
        const bank::TumorTemplate out = bank::augment(t, cfg, seed);
        CHECK(same_mask(out.mask, t.mask));
        CHECK(out.volume_voxels == t.volume_voxels);
        CHECK(out.source_id == t.source_id);
    }
}

TEST_CASE("quarter-turn augmentation is an exact axis permutation") {
    const bank::TumorTemplate t = l_template();
    for (double angle : {90.0, -90.0}) {
        bank::PlacementConfig cfg;
        cfg.flip_prob = 0.0;
        cfg.rotation_range = {angle, angle};
        cfg.zoom_range = {1.0, 1.0};

        for (uint64_t seed = 1; seed <= 12; ++seed) {
            const bank::TumorTemplate out = bank::augment(t, cfg, seed);
            CHECK(out.volume_voxels == t.volume_voxels);
            bool matched = false;
            for (int axis = 0; axis < 3 && !matched; ++axis)
                for (bool cw : {false, true}) {
                    // the oracle rotates the full grid; the template is
                    // bbox-tight so no re-crop is needed for comparison
                    if (same_mask(out.mask, rot90(t.mask, axis, cw))) matched = true;
                }
            CHECK(matched);
        }
    }
}

TEST_CASE("doubling zoom scales the bounding box and volume") {
    bank::PlacementConfig cfg;
    cfg.flip_prob = 0.0;
    cfg.rotation_range = {0.0, 0.0};
    cfg.zoom_range = {2.0, 2.0};

    const bank::TumorTemplate out = bank::augment(cube_template(5), cfg, 3);
    CHECK(out.mask.dims == std::array<int, 3>{10, 10, 10});
    CHECK(out.volume_voxels == 1000);
    // stated tolerance: within +-15% of 8x the original volume
    CHECK(out.volume_voxels >= static_cast<int64_t>(0.85 * 8 * 125));
    CHECK(out.volume_voxels <= static_cast<int64_t>(1.15 * 8 * 125));
}

TEST_CASE("augmentation is seed-deterministic and rejects hopeless templates") {
    bank::PlacementConfig cfg;  // defaults: flips, +-30 degrees, zoom 0.7..1.3
    const bank::TumorTemplate t = cube_template(4);

    const bank::TumorTemplate a = bank::augment(t, cfg, 11);
    const bank::TumorTemplate b = bank::augment(t, cfg, 11);
    CHECK(same_mask(a.mask, b.mask));

    bool any_different = false;
    for (uint64_t seed = 0; seed < 8 && !any_different; ++seed)
        any_different = !same_mask(bank::augment(t, cfg, seed).mask, a.mask);
    CHECK(any_different);

    // a disconnected template can never satisfy the output contract
    bank::TumorTemplate broken;
    broken.mask = Tens<uint8_t>({3, 3, 3}, 1);
    broken.mask.at(0, 0, 0, 0) = 1;
    broken.mask.at(2, 2, 2, 0) = 1;
    broken.source_id = "broken";
    broken.volume_voxels = 2;
    bank::PlacementConfig frozen;
    frozen.flip_prob = 0.0;
    frozen.rotation_range = {0.0, 0.0};
    frozen.zoom_range = {1.0, 1.0};
    CHECK_THROWS_AS(bank::augment(broken, frozen, 1), PlacementInfeasibleError);

    CHECK_THROWS_AS(bank::augment(bank::TumorTemplate{}, cfg, 1), std::invalid_argument);
    bank::PlacementConfig bad;
    bad.size_ratio_range = {0.5, 0.5};
    CHECK_THROWS_AS(bank::augment(t, bad, 1), std::invalid_argument);
}

TEST_CASE("a unit template lands exactly on a unit fibro site") {
    MaskVolume breast = blank_mask({8, 8, 8});
    breast.data.fill(1);
    MaskVolume fibro = blank_mask({8, 8, 8});
    fibro.data.at(4, 3, 5, 0) = 1;

    bank::PlacementConfig cfg;
    cfg.size_ratio_range = {0.0015, 0.005};  // keeps the rescaled template at 1 voxel

    const MaskVolume placed = bank::place(cube_template(1), fibro, breast, cfg, 9);
    REQUIRE(count_nonzero(placed.data) == 1);
    CHECK(placed.data.at(4, 3, 5, 0) == 1);
}

TEST_CASE("placement rejects geometry it can never satisfy") {
    // slab breast one voxel thick: any 3-D rescale of a cube cannot fit
    MaskVolume slab = blank_mask({1, 12, 12});
    slab.data.fill(1);
    MaskVolume fibro = blank_mask({1, 12, 12});
    for (int y = 4; y < 8; ++y)
        for (int z = 4; z < 8; ++z) fibro.data.at(0, y, z, 0) = 1;

    bank::PlacementConfig cfg;
    cfg.size_ratio_range = {0.3, 0.5};
    CHECK_THROWS_AS(bank::place(cube_template(3), fibro, slab, cfg, 4),
                    PlacementInfeasibleError);

    // malformed inputs fail fast
    MaskVolume breast = blank_mask({8, 8, 8});
    breast.data.fill(1);
    CHECK_THROWS_AS(bank::place(cube_template(1), blank_mask({8, 8, 8}), breast,
                                bank::PlacementConfig{}, 1),
                    std::invalid_argument);
    MaskVolume leak = blank_mask({8, 8, 8});
    leak.data.at(0, 0, 0, 0) = 1;
    MaskVolume hollow = blank_mask({8, 8, 8});
    hollow.data.at(7, 7, 7, 0) = 1;
    CHECK_THROWS_AS(bank::place(cube_template(1), leak, hollow, bank::PlacementConfig{}, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(bank::place(cube_template(1), blank_mask({6, 6, 6}), breast,
                                bank::PlacementConfig{}, 1),
                    std::invalid_argument);
}

TEST_CASE("seeded placements on phantoms satisfy every predicate") {
    PhantomSpec spec;
    bank::PlacementConfig cfg;  // defaults: ratio (0.001, 0.05), margin 2

    // harvest real tumor shapes once
    std::vector<MaskVolume> harvest;
    for (uint64_t s = 500; s < 504; ++s) harvest.push_back(generate_phantom(spec, s).tumor);
    const std::vector<bank::TumorTemplate> templates = bank::build_bank(harvest);
    REQUIRE(!templates.empty());

    int accepted = 0;
    for (uint64_t seed = 0; seed < 30; ++seed) {
        const Phantom p = generate_phantom(spec, 600 + seed);
        const MaskVolume breast = breast_of(p.vol);
        const bank::TumorTemplate& t = templates[seed % templates.size()];

        const MaskVolume placed = bank::place(t, p.fibro, breast, cfg, seed);
        ++accepted;

        const int64_t n = static_cast<int64_t>(count_nonzero(placed.data));
        REQUIRE(n > 0);

        // direct voxel re-verification, independent of the implementation
        int64_t in_dilated = 0;
        for (int x = 0; x < placed.data.dims[0]; ++x)
            for (int y = 0; y < placed.data.dims[1]; ++y)
                for (int z = 0; z < placed.data.dims[2]; ++z) {
                    if (!placed.data.at(x, y, z, 0)) continue;
                    CHECK(breast.data.at(x, y, z, 0) == 1);
                    if (within_l1(p.fibro.data, x, y, z, cfg.dilation_margin)) ++in_dilated;
                }
        CHECK(static_cast<double>(in_dilated) >= 0.6 * static_cast<double>(n));

        const double ratio = static_cast<double>(n) /
                             static_cast<double>(count_nonzero(breast.data));
        CHECK(ratio >= cfg.size_ratio_range[0]);
        CHECK(ratio <= cfg.size_ratio_range[1]);

        // purity: the same seed reproduces the same placement
        const MaskVolume again = bank::place(t, p.fibro, breast, cfg, seed);
        CHECK(placed.data.v == again.data.v);
    }
    CHECK(accepted == 30);
}

TEST_CASE("template banks survive a save and load round trip") {
    MaskVolume cube = blank_mask({7, 7, 7});
    for (int x = 1; x < 4; ++x)
        for (int y = 2; y < 6; ++y)
            for (int z = 3; z < 5; ++z) cube.data.at(x, y, z, 0) = 1;
    MaskVolume two = blank_mask({8, 5, 5});
    two.data.at(1, 1, 1, 0) = 1;
    two.data.at(6, 3, 3, 0) = 1;

    const std::vector<bank::TumorTemplate> bank0 = bank::build_bank({cube, two});
    const std::string dir = (std::filesystem::temp_directory_path() / "synbt_bank_rt").string();
    std::filesystem::remove_all(dir);
    bank::save_bank(dir, bank0);
    const std::vector<bank::TumorTemplate> bank1 = bank::load_bank(dir);

    REQUIRE(bank1.size() == bank0.size());
    for (size_t i = 0; i < bank0.size(); ++i) {
        CHECK(same_mask(bank1[i].mask, bank0[i].mask));
        CHECK(bank1[i].source_id == bank0[i].source_id);
        CHECK(bank1[i].volume_voxels == bank0[i].volume_voxels);
    }
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(bank::load_bank("/nonexistent/synbt_bank"), MissingArtifactError);
    CHECK_THROWS_AS(bank::save_bank(dir, {}), std::invalid_argument);
}

}  // TEST_SUITE
