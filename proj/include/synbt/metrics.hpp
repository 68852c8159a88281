#pragma once

#include <array>
#include <vector>

#include "synbt/volume.hpp"

namespace synbt {

// Overlap and surface-distance metrics for binary masks, plus the seam score
// used to quantify patch-grid artifacts in stitched reconstructions.

// 2|a∩b| / (|a|+|b|); both masks empty -> 1.0.
double dice(const MaskVolume& a, const MaskVolume& b);

// Surface voxels: mask minus its 6-connectivity erosion (grid border counts
// as background, so blobs touching the border keep their outer surface).
Tens<uint8_t> surface_voxels(const Tens<uint8_t>& m);

struct SurfaceDistances {
    std::vector<double> d_ab;  // per surface voxel of a (row-major order)
    std::vector<double> d_ba;
};

// Spacing-weighted Euclidean nearest-surface distances, both directions.
// Throws UndefinedDistanceError if either mask is empty.
SurfaceDistances surface_distances(const MaskVolume& a, const MaskVolume& b,
                                   std::array<double, 3> spacing);

// 95th percentile (linear interpolation) of the pooled symmetric lists.
double hd95(const MaskVolume& a, const MaskVolume& b, std::array<double, 3> spacing);

// Mean of the pooled symmetric lists.
double msd(const MaskVolume& a, const MaskVolume& b, std::array<double, 3> spacing);

// Mean absolute difference across patch-boundary planes divided by the mean
// over all interior adjacent voxel pairs. 1.0 means no seam artifact; the
// degenerate constant volume (and a 1x1x1 grid) score 1.0 by definition.
double seam_score(const Volume& v, const GridPartition& g);

}  // namespace synbt
