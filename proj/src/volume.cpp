#include "synbt/volume.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "synbt/rng.hpp"

namespace synbt {

void Volume::validate() const {
    if (data.dims[0] < 1 || data.dims[1] < 1 || data.dims[2] < 1)
        throw std::invalid_argument("volume dims must all be >= 1");
    if (data.ch != 1 && data.ch != 2) throw std::invalid_argument("volume channels must be 1 or 2");
    if (spacing[0] <= 0.0 || spacing[1] <= 0.0 || spacing[2] <= 0.0)
        throw std::invalid_argument("voxel spacing must be positive");
    if (channel_roles.size() != static_cast<size_t>(data.ch))
        throw std::invalid_argument("channel_roles size must match channel count");
    if (!data.all_finite()) throw std::invalid_argument("volume contains non-finite values");
}

void MaskVolume::validate() const {
    if (data.dims[0] < 1 || data.dims[1] < 1 || data.dims[2] < 1)
        throw std::invalid_argument("mask dims must all be >= 1");
    if (data.ch != 1) throw std::invalid_argument("mask must have a single channel");
    if (kind == MaskKind::binary)
        for (uint8_t x : data.v)
            if (x > 1) throw std::invalid_argument("binary mask contains values outside {0,1}");
}

namespace {

std::array<int, 3> resampled_dims(const std::array<int, 3>& dims,
                                  const std::array<double, 3>& spacing, double target) {
    std::array<int, 3> out;
    for (int a = 0; a < 3; ++a)
        out[a] = std::max(1, static_cast<int>(std::lround(dims[a] * spacing[a] / target)));
    return out;
}

}  // namespace

Volume resample_isotropic(const Volume& v, double target_mm) {
    v.validate();
    if (!(target_mm > 0.0)) throw std::invalid_argument("target spacing must be positive");
    const auto& d = v.data;
    const std::array<int, 3> od = resampled_dims(d.dims, v.spacing, target_mm);

    Volume out;
    out.spacing = {target_mm, target_mm, target_mm};
    out.channel_roles = v.channel_roles;
    out.data = Tensor(od, d.ch);
    for (int i = 0; i < od[0]; ++i)
        for (int j = 0; j < od[1]; ++j)
            for (int k = 0; k < od[2]; ++k) {
                const double sx = i * target_mm / v.spacing[0];
                const double sy = j * target_mm / v.spacing[1];
                const double sz = k * target_mm / v.spacing[2];
                const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, d.dims[0] - 1);
                const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, d.dims[1] - 1);
                const int z0 = std::clamp(static_cast<int>(std::floor(sz)), 0, d.dims[2] - 1);
                const int x1 = std::min(x0 + 1, d.dims[0] - 1);
                const int y1 = std::min(y0 + 1, d.dims[1] - 1);
                const int z1 = std::min(z0 + 1, d.dims[2] - 1);
                const double fx = std::clamp(sx - x0, 0.0, 1.0);
                const double fy = std::clamp(sy - y0, 0.0, 1.0);
                const double fz = std::clamp(sz - z0, 0.0, 1.0);
                for (int c = 0; c < d.ch; ++c) {
                    const double c000 = d.at(x0, y0, z0, c), c001 = d.at(x0, y0, z1, c);
                    const double c010 = d.at(x0, y1, z0, c), c011 = d.at(x0, y1, z1, c);
                    const double c100 = d.at(x1, y0, z0, c), c101 = d.at(x1, y0, z1, c);
                    const double c110 = d.at(x1, y1, z0, c), c111 = d.at(x1, y1, z1, c);
                    const double c00 = c000 + (c001 - c000) * fz;
                    const double c01 = c010 + (c011 - c010) * fz;
                    const double c10 = c100 + (c101 - c100) * fz;
                    const double c11 = c110 + (c111 - c110) * fz;
                    const double c0 = c00 + (c01 - c00) * fy;
                    const double c1 = c10 + (c11 - c10) * fy;
                    out.data.at(i, j, k, c) = static_cast<float>(c0 + (c1 - c0) * fx);
                }
            }
    return out;
}

MaskVolume resample_mask_isotropic(const MaskVolume& m, double target_mm) {
    m.validate();
    if (!(target_mm > 0.0)) throw std::invalid_argument("target spacing must be positive");
    const auto& d = m.data;
    const std::array<int, 3> od = resampled_dims(d.dims, m.spacing, target_mm);

    MaskVolume out;
    out.spacing = {target_mm, target_mm, target_mm};
    out.kind = m.kind;
    out.data = Tens<uint8_t>(od, 1);
    for (int i = 0; i < od[0]; ++i)
        for (int j = 0; j < od[1]; ++j)
            for (int k = 0; k < od[2]; ++k) {
                const int x = std::clamp(
                    static_cast<int>(std::lround(i * target_mm / m.spacing[0])), 0, d.dims[0] - 1);
                const int y = std::clamp(
                    static_cast<int>(std::lround(j * target_mm / m.spacing[1])), 0, d.dims[1] - 1);
                const int z = std::clamp(
                    static_cast<int>(std::lround(k * target_mm / m.spacing[2])), 0, d.dims[2] - 1);
                out.data.at(i, j, k, 0) = d.at(x, y, z, 0);
            }
    return out;
}

namespace {

// Sorted-array percentile with linear interpolation between order statistics.
double percentile_sorted(const std::vector<float>& sorted, double pct) {
    const size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double rank = pct / 100.0 * static_cast<double>(n - 1);
    const size_t lo = static_cast<size_t>(std::floor(rank));
    const size_t hi = std::min(lo + 1, n - 1);
    const double frac = rank - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

}  // namespace

Volume normalize(const Volume& v, double lo_pct, double hi_pct) {
    v.validate();
    if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0))
        throw std::invalid_argument("require 0 <= lo_pct < hi_pct <= 100");
    Volume out = v;
    const size_t sites = v.data.sites();
    std::vector<float> chan(sites);
    for (int c = 0; c < v.data.ch; ++c) {
        for (size_t s = 0; s < sites; ++s) chan[s] = v.data.v[s * v.data.ch + c];
        std::sort(chan.begin(), chan.end());
        const double plo = percentile_sorted(chan, lo_pct);
        const double phi = percentile_sorted(chan, hi_pct);
        if (phi <= plo) {
            for (size_t s = 0; s < sites; ++s) out.data.v[s * v.data.ch + c] = 0.0f;
            continue;
        }
        const double scale = 2.0 / (phi - plo);
        for (size_t s = 0; s < sites; ++s) {
            const double x = std::clamp(static_cast<double>(v.data.v[s * v.data.ch + c]), plo, phi);
            out.data.v[s * v.data.ch + c] = static_cast<float>((x - plo) * scale - 1.0);
        }
    }
    return out;
}

std::pair<Volume, MaskVolume> random_crop(const Volume& v, const MaskVolume& m,
                                          std::array<int, 3> size, uint64_t rng_seed) {
    v.validate();
    if (m.data.dims != v.data.dims) throw std::invalid_argument("mask grid does not match volume");
    for (int a = 0; a < 3; ++a)
        if (size[a] < 1 || size[a] > v.data.dims[a])
            throw std::invalid_argument("crop size exceeds volume dims");

    Rng rng(rng_seed);
    std::array<int, 3> origin;
    for (int a = 0; a < 3; ++a)
        origin[a] = static_cast<int>(rng.randint(v.data.dims[a] - size[a] + 1));

    Volume cv;
    cv.spacing = v.spacing;
    cv.channel_roles = v.channel_roles;
    cv.data = Tensor(size, v.data.ch);
    MaskVolume cm;
    cm.spacing = m.spacing;
    cm.kind = m.kind;
    cm.data = Tens<uint8_t>(size, 1);
    for (int i = 0; i < size[0]; ++i)
        for (int j = 0; j < size[1]; ++j)
            for (int k = 0; k < size[2]; ++k) {
                for (int c = 0; c < v.data.ch; ++c)
                    cv.data.at(i, j, k, c) = v.data.at(origin[0] + i, origin[1] + j, origin[2] + k, c);
                cm.data.at(i, j, k, 0) = m.data.at(origin[0] + i, origin[1] + j, origin[2] + k, 0);
            }
    return {std::move(cv), std::move(cm)};
}

std::pair<std::vector<Volume>, GridPartition> partition(const Volume& v,
                                                        std::array<int, 3> patch_size) {
    v.validate();
    for (int a = 0; a < 3; ++a) {
        if (patch_size[a] < 1) throw std::invalid_argument("patch dims must be >= 1");
        if (v.data.dims[a] % patch_size[a] != 0)
            throw std::invalid_argument("volume dims must be divisible by patch dims");
    }
    GridPartition g;
    g.patch_size = patch_size;
    for (int a = 0; a < 3; ++a) g.grid_dims[a] = v.data.dims[a] / patch_size[a];
    std::vector<Volume> patches;
    patches.reserve(static_cast<size_t>(g.num_patches()));
    for (int gx = 0; gx < g.grid_dims[0]; ++gx)
        for (int gy = 0; gy < g.grid_dims[1]; ++gy)
            for (int gz = 0; gz < g.grid_dims[2]; ++gz) {
                const std::array<int, 3> o{gx * patch_size[0], gy * patch_size[1],
                                           gz * patch_size[2]};
                g.patch_origins.push_back(o);
                Volume p;
                p.spacing = v.spacing;
                p.channel_roles = v.channel_roles;
                p.data = Tensor(patch_size, v.data.ch);
                for (int i = 0; i < patch_size[0]; ++i)
                    for (int j = 0; j < patch_size[1]; ++j)
                        for (int k = 0; k < patch_size[2]; ++k)
                            for (int c = 0; c < v.data.ch; ++c)
                                p.data.at(i, j, k, c) = v.data.at(o[0] + i, o[1] + j, o[2] + k, c);
                patches.push_back(std::move(p));
            }
    return {std::move(patches), std::move(g)};
}

Tensor reassemble(const std::vector<Tensor>& blocks, const GridPartition& g, int scale) {
    if (scale < 1) throw std::invalid_argument("scale must be >= 1");
    if (blocks.size() != static_cast<size_t>(g.num_patches()))
        throw std::invalid_argument("block count does not match grid");
    for (int a = 0; a < 3; ++a)
        if (g.patch_size[a] % scale != 0)
            throw std::invalid_argument("patch dims must be divisible by scale");
    const std::array<int, 3> bd{g.patch_size[0] / scale, g.patch_size[1] / scale,
                                g.patch_size[2] / scale};
    const int ch = blocks[0].ch;
    for (const auto& b : blocks)
        if (b.dims != bd || b.ch != ch)
            throw std::invalid_argument("latent block shape mismatch");

    Tensor out({g.grid_dims[0] * bd[0], g.grid_dims[1] * bd[1], g.grid_dims[2] * bd[2]}, ch);
    for (size_t p = 0; p < blocks.size(); ++p) {
        const auto& o = g.patch_origins[p];
        const int ox = o[0] / scale, oy = o[1] / scale, oz = o[2] / scale;
        for (int i = 0; i < bd[0]; ++i)
            for (int j = 0; j < bd[1]; ++j)
                for (int k = 0; k < bd[2]; ++k)
                    for (int c = 0; c < ch; ++c)
                        out.at(ox + i, oy + j, oz + k, c) = blocks[p].at(i, j, k, c);
    }
    return out;
}

Volume select_channels(const Volume& pre, const std::vector<Volume>& posts, SelectMode mode,
                       uint64_t rng_seed) {
    pre.validate();
    if (posts.empty()) throw std::invalid_argument("need at least one post-contrast volume");
    if (pre.data.ch != 1) throw std::invalid_argument("pre-contrast volume must be single-channel");
    for (const auto& p : posts) {
        p.validate();
        if (p.data.ch != 1 || p.data.dims != pre.data.dims || p.spacing != pre.spacing)
            throw std::invalid_argument("post-contrast volumes must share the pre-contrast grid");
    }
    size_t pick = 0;
    if (mode == SelectMode::train) {
        Rng rng(rng_seed);
        pick = static_cast<size_t>(rng.randint(static_cast<int64_t>(posts.size())));
    }
    Volume out;
    out.spacing = pre.spacing;
    out.channel_roles = {"pre", "post"};
    out.data = Tensor(pre.data.dims, 2);
    const size_t sites = pre.data.sites();
    for (size_t s = 0; s < sites; ++s) {
        out.data.v[s * 2 + 0] = pre.data.v[s];
        out.data.v[s * 2 + 1] = posts[pick].data.v[s];
    }
    return out;
}

std::pair<Volume, PadInfo> pad_to_multiple(const Volume& v, std::array<int, 3> patch_size) {
    v.validate();
    PadInfo info;
    std::array<int, 3> nd;
    for (int a = 0; a < 3; ++a) {
        if (patch_size[a] < 1) throw std::invalid_argument("patch dims must be >= 1");
        const int rem = v.data.dims[a] % patch_size[a];
        const int total = rem == 0 ? 0 : patch_size[a] - rem;
        info.lo[a] = total / 2;
        info.hi[a] = total - info.lo[a];
        nd[a] = v.data.dims[a] + total;
    }
    if (!info.any()) return {v, info};
    Volume out;
    out.spacing = v.spacing;
    out.channel_roles = v.channel_roles;
    out.data = Tensor(nd, v.data.ch);
    for (int i = 0; i < v.data.dims[0]; ++i)
        for (int j = 0; j < v.data.dims[1]; ++j)
            for (int k = 0; k < v.data.dims[2]; ++k)
                for (int c = 0; c < v.data.ch; ++c)
                    out.data.at(info.lo[0] + i, info.lo[1] + j, info.lo[2] + k, c) =
                        v.data.at(i, j, k, c);
    return {std::move(out), info};
}

Tensor strip_pad(const Tensor& t, const PadInfo& pad) {
    if (!pad.any()) return t;
    std::array<int, 3> nd;
    for (int a = 0; a < 3; ++a) {
        nd[a] = t.dims[a] - pad.lo[a] - pad.hi[a];
        if (nd[a] < 1) throw std::invalid_argument("padding exceeds tensor dims");
    }
    Tensor out(nd, t.ch);
    for (int i = 0; i < nd[0]; ++i)
        for (int j = 0; j < nd[1]; ++j)
            for (int k = 0; k < nd[2]; ++k)
                for (int c = 0; c < t.ch; ++c)
                    out.at(i, j, k, c) = t.at(pad.lo[0] + i, pad.lo[1] + j, pad.lo[2] + k, c);
    return out;
}

// --- morphology ---

namespace {

const std::array<std::array<int, 3>, 6> kFace = {{{1, 0, 0},
                                                  {-1, 0, 0},
                                                  {0, 1, 0},
                                                  {0, -1, 0},
                                                  {0, 0, 1},
                                                  {0, 0, -1}}};

}  // namespace

Tens<uint8_t> dilate6(const Tens<uint8_t>& m, int iters) {
    if (iters < 0) throw std::invalid_argument("dilate iterations must be >= 0");
    const auto dist = bfs_distance6(m, iters);
    Tens<uint8_t> out(m.dims, 1);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = dist[i] >= 0 ? 1 : 0;
    return out;
}

Tens<uint8_t> erode6(const Tens<uint8_t>& m, int iters) {
    if (iters < 0) throw std::invalid_argument("erode iterations must be >= 0");
    Tens<uint8_t> cur = m;
    for (auto& x : cur.v) x = x ? 1 : 0;
    for (int it = 0; it < iters; ++it) {
        Tens<uint8_t> next(m.dims, 1);
        for (int i = 0; i < m.dims[0]; ++i)
            for (int j = 0; j < m.dims[1]; ++j)
                for (int k = 0; k < m.dims[2]; ++k) {
                    if (!cur.at(i, j, k, 0)) continue;
                    bool keep = true;
                    for (const auto& f : kFace) {
                        const int x = i + f[0], y = j + f[1], z = k + f[2];
                        // voxels outside the grid count as background
                        if (x < 0 || x >= m.dims[0] || y < 0 || y >= m.dims[1] || z < 0 ||
                            z >= m.dims[2] || !cur.at(x, y, z, 0)) {
                            keep = false;
                            break;
                        }
                    }
                    next.at(i, j, k, 0) = keep ? 1 : 0;
                }
        cur = std::move(next);
    }
    return cur;
}

Tens<uint8_t> largest_component6(const Tens<uint8_t>& m) {
    Tens<uint8_t> out(m.dims, 1);
    std::vector<int32_t> label(m.v.size(), -1);
    int32_t ncomp = 0;
    size_t best_size = 0;
    int32_t best_label = -1;
    std::deque<size_t> queue;
    for (size_t start = 0; start < m.v.size(); ++start) {
        if (!m.v[start] || label[start] != -1) continue;
        const int32_t id = ncomp++;
        size_t count = 0;
        label[start] = id;
        queue.push_back(start);
        while (!queue.empty()) {
            const size_t cur = queue.front();
            queue.pop_front();
            ++count;
            const int z = static_cast<int>(cur % m.dims[2]);
            const int y = static_cast<int>(cur / m.dims[2] % m.dims[1]);
            const int x = static_cast<int>(cur / m.dims[2] / m.dims[1]);
            for (const auto& f : kFace) {
                const int nx = x + f[0], ny = y + f[1], nz = z + f[2];
                if (nx < 0 || nx >= m.dims[0] || ny < 0 || ny >= m.dims[1] || nz < 0 ||
                    nz >= m.dims[2])
                    continue;
                const size_t ni = m.site(nx, ny, nz);
                if (m.v[ni] && label[ni] == -1) {
                    label[ni] = id;
                    queue.push_back(ni);
                }
            }
        }
        if (count > best_size) {
            best_size = count;
            best_label = id;
        }
    }
    if (best_label >= 0)
        for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = label[i] == best_label ? 1 : 0;
    return out;
}

std::vector<int> bfs_distance6(const Tens<uint8_t>& m, int max_dist) {
    std::vector<int> dist(m.v.size(), -1);
    std::deque<size_t> queue;
    for (size_t i = 0; i < m.v.size(); ++i)
        if (m.v[i]) {
            dist[i] = 0;
            queue.push_back(i);
        }
    while (!queue.empty()) {
        const size_t cur = queue.front();
        queue.pop_front();
        if (dist[cur] >= max_dist) continue;
        const int z = static_cast<int>(cur % m.dims[2]);
        const int y = static_cast<int>(cur / m.dims[2] % m.dims[1]);
        const int x = static_cast<int>(cur / m.dims[2] / m.dims[1]);
        for (const auto& f : kFace) {
            const int nx = x + f[0], ny = y + f[1], nz = z + f[2];
            if (nx < 0 || nx >= m.dims[0] || ny < 0 || ny >= m.dims[1] || nz < 0 ||
                nz >= m.dims[2])
                continue;
            const size_t ni = m.site(nx, ny, nz);
            if (dist[ni] == -1) {
                dist[ni] = dist[cur] + 1;
                queue.push_back(ni);
            }
        }
    }
    return dist;
}

size_t count_nonzero(const Tens<uint8_t>& m) {
    size_t n = 0;
    for (uint8_t x : m.v) n += x != 0;
    return n;
}

}  // namespace synbt
