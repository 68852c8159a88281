#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "synbt/errors.hpp"
#include "synbt/metrics.hpp"
#include "synbt/rng.hpp"
#include "synbt/volume.hpp"

using namespace synbt;

namespace {

MaskVolume make_mask(std::array<int, 3> dims) {
    MaskVolume m;
    m.data = Tens<uint8_t>(dims, 1);
    return m;
}

MaskVolume box_mask(std::array<int, 3> dims, std::array<int, 3> lo, std::array<int, 3> hi) {
    MaskVolume m = make_mask(dims);
    for (int x = lo[0]; x <= hi[0]; ++x)
        for (int y = lo[1]; y <= hi[1]; ++y)
            for (int z = lo[2]; z <= hi[2]; ++z) m.data.at(x, y, z, 0) = 1;
    return m;
}

// Independent oracle: surface = mask voxel with any background (or
// out-of-grid) face neighbor; distances by all-pairs scan. Shares no code
// with the implementation under test.
struct Oracle {
    std::vector<std::array<int, 3>> surf_a, surf_b;
    std::vector<double> d_ab, d_ba;

    static std::vector<std::array<int, 3>> surface_of(const Tens<uint8_t>& m) {
        std::vector<std::array<int, 3>> out;
        for (int x = 0; x < m.dims[0]; ++x)
            for (int y = 0; y < m.dims[1]; ++y)
                for (int z = 0; z < m.dims[2]; ++z) {
                    if (!m.at(x, y, z, 0)) continue;
                    bool border = false;
                    const int off[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                           {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
                    for (const auto& o : off) {
                        const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                        if (nx < 0 || nx >= m.dims[0] || ny < 0 || ny >= m.dims[1] || nz < 0 ||
                            nz >= m.dims[2] || !m.at(nx, ny, nz, 0)) {
                            border = true;
                            break;
                        }
                    }
                    if (border) out.push_back({x, y, z});
                }
        return out;
    }

    static std::vector<double> dists(const std::vector<std::array<int, 3>>& from,
                                     const std::vector<std::array<int, 3>>& to,
                                     std::array<double, 3> sp) {
        std::vector<double> out;
        for (const auto& f : from) {
            double best = 1e300;
            for (const auto& t : to) {
                const double dx = (f[0] - t[0]) * sp[0];
                const double dy = (f[1] - t[1]) * sp[1];
                const double dz = (f[2] - t[2]) * sp[2];
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            out.push_back(std::sqrt(best));
        }
        return out;
    }

    Oracle(const MaskVolume& a, const MaskVolume& b, std::array<double, 3> sp) {
        surf_a = surface_of(a.data);
        surf_b = surface_of(b.data);
        d_ab = dists(surf_a, surf_b, sp);
        d_ba = dists(surf_b, surf_a, sp);
    }

    std::vector<double> pooled() const {
        std::vector<double> all = d_ab;
        all.insert(all.end(), d_ba.begin(), d_ba.end());
        return all;
    }

    double hd95() const {
        auto all = pooled();
        std::sort(all.begin(), all.end());
        const double rank = 0.95 * static_cast<double>(all.size() - 1);
        const size_t lo = static_cast<size_t>(rank);
        const size_t hi = std::min(lo + 1, all.size() - 1);
        return all[lo] + (all[hi] - all[lo]) * (rank - static_cast<double>(lo));
    }

    double msd() const {
        auto all = pooled();
        std::sort(all.begin(), all.end());  // same sorted-sum convention as the implementation
        double s = 0.0;
        for (double d : all) s += d;
        return s / static_cast<double>(all.size());
    }
};

MaskVolume random_mask(std::array<int, 3> dims, double p, Rng& rng) {
    MaskVolume m = make_mask(dims);
    for (auto& x : m.data.v) x = rng.coin(p) ? 1 : 0;
    return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("dice of identical nonempty masks is 1") {
    const MaskVolume a = box_mask({8, 8, 8}, {2, 2, 2}, {5, 5, 5});
    CHECK(dice(a, a) == 1.0);
}

TEST_CASE("dice of disjoint nonempty masks is 0") {
    const MaskVolume a = box_mask({8, 8, 8}, {0, 0, 0}, {2, 2, 2});
    const MaskVolume b = box_mask({8, 8, 8}, {5, 5, 5}, {7, 7, 7});
    CHECK(dice(a, b) == 0.0);
}

TEST_CASE("dice half-overlap case") {
    // |a| = 100, |b| = 100, |a ∩ b| = 50 -> 2*50/200 = 0.5
    const MaskVolume a = box_mask({10, 10, 10}, {0, 0, 0}, {0, 9, 9});  // x = 0 plane, 100 voxels
    MaskVolume b = make_mask({10, 10, 10});
    for (int y = 0; y < 10; ++y)
        for (int z = 0; z < 10; ++z) {
            if (y < 5)
                b.data.at(0, y, z, 0) = 1;  // 50 shared
            else
                b.data.at(5, y, z, 0) = 1;  // 50 elsewhere
        }
    CHECK(dice(a, b) == 0.5);
}

TEST_CASE("dice conventions and errors") {
    const MaskVolume e1 = make_mask({4, 4, 4});
    const MaskVolume e2 = make_mask({4, 4, 4});
    CHECK(dice(e1, e2) == 1.0);
    const MaskVolume a = box_mask({4, 4, 4}, {0, 0, 0}, {1, 1, 1});
    CHECK(dice(a, e1) == 0.0);
    const MaskVolume wrong = make_mask({4, 4, 5});
    CHECK_THROWS_AS(dice(a, wrong), std::invalid_argument);
}

TEST_CASE("dice is symmetric and bounded on random masks") {
    Rng rng(31);
    for (int t = 0; t < 10; ++t) {
        const MaskVolume a = random_mask({6, 6, 6}, 0.3, rng);
        const MaskVolume b = random_mask({6, 6, 6}, 0.3, rng);
        const double d1 = dice(a, b), d2 = dice(b, a);
        CHECK(d1 == d2);
        CHECK(d1 >= 0.0);
        CHECK(d1 <= 1.0);
    }
}

TEST_CASE("surface of a solid box is its shell") {
    const MaskVolume a = box_mask({9, 9, 9}, {2, 2, 2}, {6, 6, 6});  // 5^3 cube
    const auto surf = surface_voxels(a.data);
    CHECK(count_nonzero(surf) == 125 - 27);  // 5^3 minus the 3^3 core
    // a box touching the grid border keeps its outer faces as surface
    const MaskVolume edge = box_mask({5, 5, 5}, {0, 0, 0}, {4, 4, 4});
    CHECK(count_nonzero(surface_voxels(edge.data)) == 125 - 27);
}

TEST_CASE("identical masks give all-zero distances") {
    const MaskVolume a = box_mask({8, 8, 8}, {1, 2, 3}, {4, 5, 6});
    const SurfaceDistances sd = surface_distances(a, a, {1, 1, 1});
    CHECK(!sd.d_ab.empty());
    CHECK(sd.d_ab.size() == sd.d_ba.size());
    for (double d : sd.d_ab) CHECK(d == 0.0);
    for (double d : sd.d_ba) CHECK(d == 0.0);
    CHECK(hd95(a, a, {1, 1, 1}) == 0.0);
    CHECK(msd(a, a, {1, 1, 1}) == 0.0);
}

TEST_CASE("unit cubes offset by 3 voxels match the brute-force oracle") {
    const MaskVolume a = box_mask({12, 6, 6}, {1, 2, 2}, {1, 2, 2});
    const MaskVolume b = box_mask({12, 6, 6}, {4, 2, 2}, {4, 2, 2});
    const std::array<double, 3> sp{1, 1, 1};
    const SurfaceDistances sd = surface_distances(a, b, sp);
    const Oracle o(a, b, sp);
    CHECK(sd.d_ab == o.d_ab);
    CHECK(sd.d_ba == o.d_ba);
    CHECK(*std::min_element(sd.d_ab.begin(), sd.d_ab.end()) == 3.0);
    // larger cubes: full lists still match the all-pairs oracle
    const MaskVolume a2 = box_mask({12, 6, 6}, {1, 2, 2}, {2, 3, 3});
    const MaskVolume b2 = box_mask({12, 6, 6}, {4, 2, 2}, {5, 3, 3});
    const SurfaceDistances sd2 = surface_distances(a2, b2, sp);
    const Oracle o2(a2, b2, sp);
    CHECK(sd2.d_ab == o2.d_ab);
    CHECK(sd2.d_ba == o2.d_ba);
}

TEST_CASE("anisotropic spacing scales axis contributions") {
    // two single-voxel masks 3 voxels apart along x
    MaskVolume a = make_mask({8, 4, 4});
    MaskVolume b = make_mask({8, 4, 4});
    a.data.at(1, 1, 1, 0) = 1;
    b.data.at(4, 1, 1, 0) = 1;
    CHECK(msd(a, b, {1, 1, 1}) == 3.0);
    CHECK(msd(a, b, {2, 1, 1}) == 6.0);
    const Oracle o1(a, b, {2, 1, 1});
    CHECK(hd95(a, b, {2, 1, 1}) == o1.hd95());
    // offset along y is unaffected by x spacing
    MaskVolume c = make_mask({8, 4, 4});
    c.data.at(1, 3, 1, 0) = 1;
    CHECK(msd(a, c, {2, 1, 1}) == 2.0);
}

TEST_CASE("single-voxel masks 4 mm apart") {
    MaskVolume a = make_mask({8, 2, 2});
    MaskVolume b = make_mask({8, 2, 2});
    a.data.at(1, 0, 0, 0) = 1;
    b.data.at(5, 0, 0, 0) = 1;
    CHECK(hd95(a, b, {1, 1, 1}) == 4.0);
    CHECK(msd(a, b, {1, 1, 1}) == 4.0);
}

TEST_CASE("empty masks make distances undefined") {
    const MaskVolume a = box_mask({4, 4, 4}, {1, 1, 1}, {2, 2, 2});
    const MaskVolume e = make_mask({4, 4, 4});
    CHECK_THROWS_AS(surface_distances(a, e, {1, 1, 1}), UndefinedDistanceError);
    CHECK_THROWS_AS(surface_distances(e, a, {1, 1, 1}), UndefinedDistanceError);
    CHECK_THROWS_AS(hd95(e, e, {1, 1, 1}), UndefinedDistanceError);
    CHECK_THROWS_AS(msd(a, e, {1, 1, 1}), UndefinedDistanceError);
}

TEST_CASE("exact agreement with the oracle on random masks up to 12^3") {
    Rng rng(32);
    int tested = 0;
    for (int t = 0; tested < 12; ++t) {
        REQUIRE(t < 100);
        const std::array<int, 3> dims{4 + static_cast<int>(rng.randint(9)),
                                      4 + static_cast<int>(rng.randint(9)),
                                      4 + static_cast<int>(rng.randint(9))};
        const MaskVolume a = random_mask(dims, 0.2, rng);
        const MaskVolume b = random_mask(dims, 0.2, rng);
        if (count_nonzero(a.data) == 0 || count_nonzero(b.data) == 0) continue;
        const std::array<double, 3> sp{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0),
                                       rng.uniform(0.5, 2.0)};
        const SurfaceDistances sd = surface_distances(a, b, sp);
        const Oracle o(a, b, sp);
        REQUIRE(sd.d_ab == o.d_ab);
        REQUIRE(sd.d_ba == o.d_ba);
        CHECK(hd95(a, b, sp) == o.hd95());
        CHECK(msd(a, b, sp) == o.msd());
        // symmetry of the pooled metrics
        CHECK(hd95(b, a, sp) == hd95(a, b, sp));
        CHECK(msd(b, a, sp) == msd(a, b, sp));
        // bounds against the pooled list
        const auto all = o.pooled();
        const double mx = *std::max_element(all.begin(), all.end());
        CHECK(hd95(a, b, sp) <= mx);
        CHECK(msd(a, b, sp) <= mx);
        CHECK(hd95(a, b, sp) >= 0.0);
        ++tested;
    }
}

TEST_CASE("seam score of a constant volume is 1") {
    Volume v;
    v.data = Tensor({16, 16, 16}, 1);
    v.data.fill(0.25f);
    v.channel_roles = {"image"};
    GridPartition g;
    g.patch_size = {8, 8, 8};
    g.grid_dims = {2, 2, 2};
    CHECK(seam_score(v, g) == 1.0);
}

TEST_CASE("seam score of a smooth field is close to 1") {
    Volume v;
    v.data = Tensor({16, 16, 16}, 2);
    v.channel_roles = {"pre", "post"};
    for (int x = 0; x < 16; ++x)
        for (int y = 0; y < 16; ++y)
            for (int z = 0; z < 16; ++z)
                for (int c = 0; c < 2; ++c)
                    v.data.at(x, y, z, c) = static_cast<float>(
                        std::sin(0.37 * x + 0.21 * y + 0.11 * z + 0.5 * c));
    GridPartition g;
    g.patch_size = {8, 8, 8};
    g.grid_dims = {2, 2, 2};
    const double s = seam_score(v, g);
    CHECK(s > 0.9);
    CHECK(s < 1.1);
}

TEST_CASE("seam score of offset alternate patches is exactly computable") {
    // constant base with +0.5 on checkerboard patches: every boundary-crossing
    // pair differs by 0.5, every other pair by 0. One boundary plane per axis
    // out of 15 interior planes -> score = 15.
    Volume v;
    v.data = Tensor({16, 16, 16}, 1);
    v.channel_roles = {"image"};
    for (int x = 0; x < 16; ++x)
        for (int y = 0; y < 16; ++y)
            for (int z = 0; z < 16; ++z) {
                const int par = (x / 8 + y / 8 + z / 8) % 2;
                v.data.at(x, y, z, 0) = 0.25f + 0.5f * static_cast<float>(par);
            }
    GridPartition g;
    g.patch_size = {8, 8, 8};
    g.grid_dims = {2, 2, 2};
    CHECK(seam_score(v, g) == doctest::Approx(15.0).epsilon(1e-12));
}

TEST_CASE("seam score validates the grid") {
    Volume v;
    v.data = Tensor({16, 16, 16}, 1);
    v.channel_roles = {"image"};
    GridPartition g;
    g.patch_size = {8, 8, 8};
    g.grid_dims = {2, 2, 3};
    CHECK_THROWS_AS(seam_score(v, g), std::invalid_argument);
}

}  // TEST_SUITE
