#include "synbt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "synbt/errors.hpp"

namespace synbt {

namespace {

void check_pair(const MaskVolume& a, const MaskVolume& b) {
    a.validate();
    b.validate();
    if (a.kind != MaskKind::binary || b.kind != MaskKind::binary)
        throw std::invalid_argument("metric masks must be binary");
    if (a.data.dims != b.data.dims) throw std::invalid_argument("mask grids do not match");
}

struct Vox {
    int x, y, z;
};

std::vector<Vox> surface_list(const Tens<uint8_t>& m) {
    const Tens<uint8_t> surf = surface_voxels(m);
    std::vector<Vox> out;
    for (int x = 0; x < m.dims[0]; ++x)
        for (int y = 0; y < m.dims[1]; ++y)
            for (int z = 0; z < m.dims[2]; ++z)
                if (surf.at(x, y, z, 0)) out.push_back({x, y, z});
    return out;
}

std::vector<double> nearest_distances(const std::vector<Vox>& from, const std::vector<Vox>& to,
                                      const std::array<double, 3>& sp) {
    std::vector<double> out;
    out.reserve(from.size());
    for (const Vox& f : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vox& t : to) {
            const double dx = (f.x - t.x) * sp[0];
            const double dy = (f.y - t.y) * sp[1];
            const double dz = (f.z - t.z) * sp[2];
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < best) best = d2;
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

double percentile_interp(std::vector<double> vals, double pct) {
    std::sort(vals.begin(), vals.end());
    const size_t n = vals.size();
    if (n == 1) return vals[0];
    const double rank = pct / 100.0 * static_cast<double>(n - 1);
    const size_t lo = static_cast<size_t>(std::floor(rank));
    const size_t hi = std::min(lo + 1, n - 1);
    return vals[lo] + (vals[hi] - vals[lo]) * (rank - static_cast<double>(lo));
}

}  // namespace

double dice(const MaskVolume& a, const MaskVolume& b) {
    check_pair(a, b);
    size_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.data.v.size(); ++i) {
        na += a.data.v[i] != 0;
        nb += b.data.v[i] != 0;
        inter += (a.data.v[i] != 0 && b.data.v[i] != 0);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

Tens<uint8_t> surface_voxels(const Tens<uint8_t>& m) {
    const Tens<uint8_t> core = erode6(m, 1);
    Tens<uint8_t> out(m.dims, 1);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = (m.v[i] && !core.v[i]) ? 1 : 0;
    return out;
}

SurfaceDistances surface_distances(const MaskVolume& a, const MaskVolume& b,
                                   std::array<double, 3> spacing) {
    check_pair(a, b);
    const auto sa = surface_list(a.data);
    const auto sb = surface_list(b.data);
    if (sa.empty() || sb.empty())
        throw UndefinedDistanceError("surface distance undefined for an empty mask");
    SurfaceDistances out;
    out.d_ab = nearest_distances(sa, sb, spacing);
    out.d_ba = nearest_distances(sb, sa, spacing);
    return out;
}

namespace {

std::vector<double> pooled(const MaskVolume& a, const MaskVolume& b,
                           const std::array<double, 3>& spacing) {
    const SurfaceDistances sd = surface_distances(a, b, spacing);
    std::vector<double> all = sd.d_ab;
    all.insert(all.end(), sd.d_ba.begin(), sd.d_ba.end());
    return all;
}

}  // namespace

double hd95(const MaskVolume& a, const MaskVolume& b, std::array<double, 3> spacing) {
    return percentile_interp(pooled(a, b, spacing), 95.0);
}

double msd(const MaskVolume& a, const MaskVolume& b, std::array<double, 3> spacing) {
    // summed in sorted order so the mean is independent of which mask came
    // first and msd(a,b) == msd(b,a) holds exactly
    std::vector<double> all = pooled(a, b, spacing);
    std::sort(all.begin(), all.end());
    double s = 0.0;
    for (double d : all) s += d;
    return s / static_cast<double>(all.size());
}

double seam_score(const Volume& v, const GridPartition& g) {
    v.validate();
    const auto& d = v.data;
    for (int a = 0; a < 3; ++a)
        if (g.patch_size[a] < 1 || g.grid_dims[a] * g.patch_size[a] != d.dims[a])
            throw std::invalid_argument("grid partition inconsistent with volume dims");

    double seam_sum = 0.0, all_sum = 0.0;
    size_t seam_n = 0, all_n = 0;
    auto visit_axis = [&](int axis) {
        const int n = d.dims[axis];
        const int p = g.patch_size[axis];
        std::array<int, 3> i{0, 0, 0};
        const std::array<int, 3> lim = d.dims;
        for (i[0] = 0; i[0] < lim[0]; ++i[0])
            for (i[1] = 0; i[1] < lim[1]; ++i[1])
                for (i[2] = 0; i[2] < lim[2]; ++i[2]) {
                    if (i[axis] == 0) continue;
                    std::array<int, 3> j = i;
                    --j[axis];
                    for (int c = 0; c < d.ch; ++c) {
                        const double diff = std::fabs(
                            static_cast<double>(d.at(i[0], i[1], i[2], c)) -
                            static_cast<double>(d.at(j[0], j[1], j[2], c)));
                        all_sum += diff;
                        ++all_n;
                        if (i[axis] % p == 0 && i[axis] < n) {
                            seam_sum += diff;
                            ++seam_n;
                        }
                    }
                }
    };
    visit_axis(0);
    visit_axis(1);
    visit_axis(2);
    if (seam_n == 0) return 1.0;  // 1x1x1 grid: no seams to score
    if (all_sum == 0.0) return 1.0;  // constant volume
    const double seam_mean = seam_sum / static_cast<double>(seam_n);
    const double all_mean = all_sum / static_cast<double>(all_n);
    return seam_mean / all_mean;
}

}  // namespace synbt
