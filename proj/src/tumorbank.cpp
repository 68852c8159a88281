#include "synbt/tumorbank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "synbt/errors.hpp"
#include "synbt/rng.hpp"

namespace synbt::bank {

using nlohmann::json;

void PlacementConfig::validate() const {
    if (!(size_ratio_range[0] > 0.0 && size_ratio_range[0] < size_ratio_range[1] &&
          size_ratio_range[1] < 1.0))
        throw std::invalid_argument("size ratio range must satisfy 0 < min < max < 1");
    if (max_rejections < 1) throw std::invalid_argument("max_rejections must be >= 1");
    if (dilation_margin < 0) throw std::invalid_argument("dilation margin must be >= 0");
    if (!(zoom_range[0] > 0.0 && zoom_range[0] <= zoom_range[1]))
        throw std::invalid_argument("zoom range must be positive and ordered");
    if (rotation_range[0] > rotation_range[1])
        throw std::invalid_argument("rotation range must be ordered");
    if (flip_prob < 0.0 || flip_prob > 1.0)
        throw std::invalid_argument("flip probability must lie in [0, 1]");
}

namespace {

struct Bbox {
    std::array<int, 3> lo{0, 0, 0}, hi{-1, -1, -1};  // inclusive; empty when hi < lo
    bool empty() const { return hi[0] < lo[0]; }
};

Bbox bounding_box(const Tens<uint8_t>& m) {
    Bbox b;
    b.lo = {m.dims[0], m.dims[1], m.dims[2]};
    for (int x = 0; x < m.dims[0]; ++x)
        for (int y = 0; y < m.dims[1]; ++y)
            for (int z = 0; z < m.dims[2]; ++z) {
                if (!m.at(x, y, z, 0)) continue;
                b.lo = {std::min(b.lo[0], x), std::min(b.lo[1], y), std::min(b.lo[2], z)};
                b.hi = {std::max(b.hi[0], x), std::max(b.hi[1], y), std::max(b.hi[2], z)};
            }
    return b;
}

Tens<uint8_t> crop_tight(const Tens<uint8_t>& m) {
    const Bbox b = bounding_box(m);
    if (b.empty()) return Tens<uint8_t>({0, 0, 0}, 1);
    Tens<uint8_t> out({b.hi[0] - b.lo[0] + 1, b.hi[1] - b.lo[1] + 1, b.hi[2] - b.lo[2] + 1}, 1);
    for (int x = 0; x < out.dims[0]; ++x)
        for (int y = 0; y < out.dims[1]; ++y)
            for (int z = 0; z < out.dims[2]; ++z)
                out.at(x, y, z, 0) = m.at(b.lo[0] + x, b.lo[1] + y, b.lo[2] + z, 0);
    return out;
}

int64_t voxel_count(const Tens<uint8_t>& m) {
    return static_cast<int64_t>(count_nonzero(m));
}

bool connected6(const Tens<uint8_t>& m) {
    const int64_t total = voxel_count(m);
    if (total == 0) return false;
    std::array<int, 3> start{-1, -1, -1};
    for (int x = 0; x < m.dims[0] && start[0] < 0; ++x)
        for (int y = 0; y < m.dims[1] && start[0] < 0; ++y)
            for (int z = 0; z < m.dims[2] && start[0] < 0; ++z)
                if (m.at(x, y, z, 0)) start = {x, y, z};

    Tens<uint8_t> seen(m.dims, 1);
    std::deque<std::array<int, 3>> q{start};
    seen.at(start[0], start[1], start[2], 0) = 1;
    int64_t reached = 0;
    const int dx[6] = {1, -1, 0, 0, 0, 0};
    const int dy[6] = {0, 0, 1, -1, 0, 0};
    const int dz[6] = {0, 0, 0, 0, 1, -1};
    while (!q.empty()) {
        const auto [x, y, z] = q.front();
        q.pop_front();
        ++reached;
        for (int k = 0; k < 6; ++k) {
            const int nx = x + dx[k], ny = y + dy[k], nz = z + dz[k];
            if (nx < 0 || ny < 0 || nz < 0 || nx >= m.dims[0] || ny >= m.dims[1] ||
                nz >= m.dims[2])
                continue;
            if (seen.at(nx, ny, nz, 0) || !m.at(nx, ny, nz, 0)) continue;
            seen.at(nx, ny, nz, 0) = 1;
            q.push_back({nx, ny, nz});
        }
    }
    return reached == total;
}

TumorTemplate make_template(const Tens<uint8_t>& mask, std::string source_id) {
    TumorTemplate t;
    t.mask = crop_tight(mask);
    t.source_id = std::move(source_id);
    t.volume_voxels = voxel_count(t.mask);
    return t;
}

// Nearest-neighbor rotation about one principal axis through the grid center;
// padded output, caller re-crops.
Tens<uint8_t> rotate_nn(const Tens<uint8_t>& m, int axis, double degrees) {
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;  // rotation plane

    const double e1 = m.dims[a1], e2 = m.dims[a2];
    const int o1 = static_cast<int>(std::llround(std::abs(e1 * c) + std::abs(e2 * s))) + 2;
    const int o2 = static_cast<int>(std::llround(std::abs(e1 * s) + std::abs(e2 * c))) + 2;
    std::array<int, 3> odims{};
    odims[axis] = m.dims[axis];
    odims[a1] = o1;
    odims[a2] = o2;

    Tens<uint8_t> out(odims, 1);
    const double c1_in = 0.5 * (m.dims[a1] - 1), c2_in = 0.5 * (m.dims[a2] - 1);
    const double c1_out = 0.5 * (o1 - 1), c2_out = 0.5 * (o2 - 1);
    std::array<int, 3> p{};
    for (p[0] = 0; p[0] < odims[0]; ++p[0])
        for (p[1] = 0; p[1] < odims[1]; ++p[1])
            for (p[2] = 0; p[2] < odims[2]; ++p[2]) {
                const double u = p[a1] - c1_out, v = p[a2] - c2_out;
                // inverse rotation back into the source plane
                const double su = c * u + s * v + c1_in;
                const double sv = -s * u + c * v + c2_in;
                std::array<int, 3> q{};
                q[axis] = p[axis];
                q[a1] = static_cast<int>(std::llround(su));
                q[a2] = static_cast<int>(std::llround(sv));
                if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= m.dims[0] ||
                    q[1] >= m.dims[1] || q[2] >= m.dims[2])
                    continue;
                out.at(p[0], p[1], p[2], 0) = m.at(q[0], q[1], q[2], 0) ? 1 : 0;
            }
    return out;
}

Tens<uint8_t> zoom_nn(const Tens<uint8_t>& m, double factor) {
    std::array<int, 3> odims{};
    for (int a = 0; a < 3; ++a)
        odims[a] = std::max<int>(1, static_cast<int>(std::llround(m.dims[a] * factor)));
    Tens<uint8_t> out(odims, 1);
    for (int x = 0; x < odims[0]; ++x)
        for (int y = 0; y < odims[1]; ++y)
            for (int z = 0; z < odims[2]; ++z) {
                const auto src = [&](int o, int a) {
                    const int i =
                        static_cast<int>(std::llround((o + 0.5) * m.dims[a] /
                                                      static_cast<double>(odims[a]) - 0.5));
                    return std::clamp(i, 0, m.dims[a] - 1);
                };
                out.at(x, y, z, 0) = m.at(src(x, 0), src(y, 1), src(z, 2), 0) ? 1 : 0;
            }
    return out;
}

Tens<uint8_t> flip_axis(const Tens<uint8_t>& m, int axis) {
    Tens<uint8_t> out(m.dims, 1);
    for (int x = 0; x < m.dims[0]; ++x)
        for (int y = 0; y < m.dims[1]; ++y)
            for (int z = 0; z < m.dims[2]; ++z) {
                std::array<int, 3> q{x, y, z};
                q[axis] = m.dims[axis] - 1 - q[axis];
                out.at(x, y, z, 0) = m.at(q[0], q[1], q[2], 0);
            }
    return out;
}

}  // namespace

std::vector<TumorTemplate> build_bank(const std::vector<MaskVolume>& masks, int* skipped) {
    std::vector<TumorTemplate> out;
    int empties = 0;
    for (size_t i = 0; i < masks.size(); ++i) {
        const MaskVolume& m = masks[i];
        m.validate();
        if (count_nonzero(m.data) == 0) {
            ++empties;
            continue;
        }
        // label 6-connected components in first-voxel scan order
        Tens<uint8_t> remaining = m.data;
        int comp = 0;
        while (count_nonzero(remaining) > 0) {
            std::array<int, 3> start{-1, -1, -1};
            for (int x = 0; x < remaining.dims[0] && start[0] < 0; ++x)
                for (int y = 0; y < remaining.dims[1] && start[0] < 0; ++y)
                    for (int z = 0; z < remaining.dims[2] && start[0] < 0; ++z)
                        if (remaining.at(x, y, z, 0)) start = {x, y, z};

            Tens<uint8_t> comp_mask(remaining.dims, 1);
            std::deque<std::array<int, 3>> q{start};
            remaining.at(start[0], start[1], start[2], 0) = 0;
            comp_mask.at(start[0], start[1], start[2], 0) = 1;
            const int dx[6] = {1, -1, 0, 0, 0, 0};
            const int dy[6] = {0, 0, 1, -1, 0, 0};
            const int dz[6] = {0, 0, 0, 0, 1, -1};
            while (!q.empty()) {
                const auto [x, y, z] = q.front();
                q.pop_front();
                for (int k = 0; k < 6; ++k) {
                    const int nx = x + dx[k], ny = y + dy[k], nz = z + dz[k];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= remaining.dims[0] ||
                        ny >= remaining.dims[1] || nz >= remaining.dims[2])
                        continue;
                    if (!remaining.at(nx, ny, nz, 0)) continue;
                    remaining.at(nx, ny, nz, 0) = 0;
                    comp_mask.at(nx, ny, nz, 0) = 1;
                    q.push_back({nx, ny, nz});
                }
            }
            out.push_back(make_template(
                comp_mask, "mask" + std::to_string(i) + "/comp" + std::to_string(comp)));
            ++comp;
        }
    }
    if (skipped) *skipped = empties;
    if (out.empty()) throw std::invalid_argument("no nonempty masks to harvest templates from");
    return out;
}

TumorTemplate augment(const TumorTemplate& t, const PlacementConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (t.volume_voxels == 0 || voxel_count(t.mask) == 0)
        throw std::invalid_argument("cannot augment an empty template");

    Rng rng(Rng::derive(seed, "bank-augment"));
    for (int attempt = 0; attempt < cfg.max_rejections; ++attempt) {
        Tens<uint8_t> m = t.mask;
        for (int a = 0; a < 3; ++a)
            if (rng.coin(cfg.flip_prob)) m = flip_axis(m, a);
        const int axis = static_cast<int>(rng.randint(3));
        const double angle = rng.uniform(cfg.rotation_range[0], cfg.rotation_range[1]);
        if (angle != 0.0) m = rotate_nn(m, axis, angle);
        const double zoom = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1]);
        if (zoom != 1.0) m = zoom_nn(m, zoom);

        m = crop_tight(m);
        if (voxel_count(m) == 0 || !connected6(m)) continue;
        TumorTemplate out = make_template(m, t.source_id);
        return out;
    }
    throw PlacementInfeasibleError("augmentation kept breaking the template after " +
                                   std::to_string(cfg.max_rejections) + " attempts");
}

MaskVolume place(const TumorTemplate& t, const MaskVolume& fibro, const MaskVolume& breast,
                 const PlacementConfig& cfg, uint64_t seed) {
    cfg.validate();
    fibro.validate();
    breast.validate();
    if (fibro.data.dims != breast.data.dims)
        throw std::invalid_argument("fibro/breast grid mismatch");
    if (t.volume_voxels <= 0) throw std::invalid_argument("empty template");
    const int64_t breast_vox = voxel_count(breast.data);
    if (breast_vox == 0) throw std::invalid_argument("empty breast mask");

    std::vector<std::array<int, 3>> fibro_sites;
    for (int x = 0; x < fibro.data.dims[0]; ++x)
        for (int y = 0; y < fibro.data.dims[1]; ++y)
            for (int z = 0; z < fibro.data.dims[2]; ++z)
                if (fibro.data.at(x, y, z, 0)) {
                    if (!breast.data.at(x, y, z, 0))
                        throw std::invalid_argument("fibro mask leaks outside the breast");
                    fibro_sites.push_back({x, y, z});
                }
    if (fibro_sites.empty()) throw std::invalid_argument("empty fibroglandular mask");

    const Tens<uint8_t> fibro_dilated = dilate6(fibro.data, cfg.dilation_margin);
    Rng rng(Rng::derive(seed, "bank-place"));

    for (int attempt = 0; attempt < cfg.max_rejections; ++attempt) {
        const double ratio = rng.uniform(cfg.size_ratio_range[0], cfg.size_ratio_range[1]);
        const double scale = std::cbrt(ratio * static_cast<double>(breast_vox) /
                                       static_cast<double>(t.volume_voxels));
        Tens<uint8_t> shaped = crop_tight(zoom_nn(t.mask, scale));
        const int64_t placed_vox = voxel_count(shaped);
        if (placed_vox == 0) continue;
        // nearest-neighbor quantization can push the realized ratio out of
        // range; re-check on actual voxels since the predicate is re-verified
        const double realized =
            static_cast<double>(placed_vox) / static_cast<double>(breast_vox);
        if (realized < cfg.size_ratio_range[0] || realized > cfg.size_ratio_range[1]) continue;

        const std::array<int, 3> half{(shaped.dims[0] - 1) / 2, (shaped.dims[1] - 1) / 2,
                                      (shaped.dims[2] - 1) / 2};

        // prefer centers whose template box stays inside fibro-eroded space
        std::vector<std::array<int, 3>> candidates;
        for (const auto& site : fibro_sites) {
            bool fits = true;
            for (int a = 0; a < 3 && fits; ++a) {
                const int lo = site[a] - half[a];
                const int hi = lo + shaped.dims[a] - 1;
                if (lo < 0 || hi >= fibro.data.dims[a]) fits = false;
            }
            if (fits) candidates.push_back(site);
        }
        const auto& pool = candidates.empty() ? fibro_sites : candidates;
        const auto center = pool[static_cast<size_t>(
            rng.randint(static_cast<int64_t>(pool.size())))];

        MaskVolume placed;
        placed.data = Tens<uint8_t>(fibro.data.dims, 1);
        placed.spacing = breast.spacing;
        bool contained = true;
        int64_t inside_dilated = 0, written = 0;
        for (int x = 0; x < shaped.dims[0] && contained; ++x)
            for (int y = 0; y < shaped.dims[1] && contained; ++y)
                for (int z = 0; z < shaped.dims[2] && contained; ++z) {
                    if (!shaped.at(x, y, z, 0)) continue;
                    const int gx = center[0] - half[0] + x;
                    const int gy = center[1] - half[1] + y;
                    const int gz = center[2] - half[2] + z;
                    if (gx < 0 || gy < 0 || gz < 0 || gx >= placed.data.dims[0] ||
                        gy >= placed.data.dims[1] || gz >= placed.data.dims[2] ||
                        !breast.data.at(gx, gy, gz, 0)) {
                        contained = false;
                        break;
                    }
                    placed.data.at(gx, gy, gz, 0) = 1;
                    ++written;
                    if (fibro_dilated.at(gx, gy, gz, 0)) ++inside_dilated;
                }
        if (!contained || written != placed_vox) continue;
        if (static_cast<double>(inside_dilated) < 0.6 * static_cast<double>(placed_vox))
            continue;
        return placed;
    }
    throw PlacementInfeasibleError("no feasible tumor placement within " +
                                   std::to_string(cfg.max_rejections) + " attempts");
}

void save_bank(const std::string& dir, const std::vector<TumorTemplate>& bank) {
    if (bank.empty()) throw std::invalid_argument("refusing to save an empty template bank");
    std::filesystem::create_directories(dir);
    json index = json::array();
    for (size_t i = 0; i < bank.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "template_%03zu.svol", i);
        MaskVolume m;
        m.data = bank[i].mask;
        save_mask(dir + "/" + name, m);
        index.push_back({{"file", name},
                         {"source_id", bank[i].source_id},
                         {"volume_voxels", bank[i].volume_voxels}});
    }
    std::ofstream f(dir + "/bank.json");
    f << index.dump(2) << "\n";
}

std::vector<TumorTemplate> load_bank(const std::string& dir) {
    std::ifstream f(dir + "/bank.json");
    if (!f) throw MissingArtifactError("template bank index not found in " + dir);
    json index = json::parse(f);
    std::vector<TumorTemplate> bank;
    for (const auto& e : index) {
        TumorTemplate t;
        t.mask = load_mask(dir + "/" + e.at("file").get<std::string>()).data;
        t.source_id = e.at("source_id").get<std::string>();
        t.volume_voxels = e.at("volume_voxels").get<int64_t>();
        if (t.volume_voxels != voxel_count(t.mask))
            throw MissingArtifactError("template bank entry voxel count mismatch");
        bank.push_back(std::move(t));
    }
    if (bank.empty()) throw MissingArtifactError("template bank index is empty");
    return bank;
}

}  // namespace synbt::bank
