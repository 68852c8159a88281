#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "synbt/tensor.hpp"

namespace synbt {

enum class MaskKind { binary, label };

// Dual-sequence image volume. Channel-last data, channel_roles names each
// channel ("pre", "post"); C is 1 or 2.
struct Volume {
    Tensor data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<std::string> channel_roles;

    void validate() const;  // throws std::invalid_argument on any broken invariant
};

// Integer mask on the same grid as its volume. Binary masks hold {0,1};
// label masks hold small non-negative ids.
struct MaskVolume {
    Tens<uint8_t> data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    MaskKind kind = MaskKind::binary;

    void validate() const;
};

// Fixed row-major patch tiling of a volume: origin list index
// (gx*gy_dim + gy)*gz_dim + gz, so serialized grids mean the same thing
// everywhere.
struct GridPartition {
    std::array<int, 3> patch_size{0, 0, 0};
    std::array<int, 3> grid_dims{0, 0, 0};
    std::vector<std::array<int, 3>> patch_origins;

    int num_patches() const { return grid_dims[0] * grid_dims[1] * grid_dims[2]; }
};

struct PadInfo {
    std::array<int, 3> lo{0, 0, 0};
    std::array<int, 3> hi{0, 0, 0};
    bool any() const { return lo != std::array<int, 3>{0, 0, 0} || hi != std::array<int, 3>{0, 0, 0}; }
};

// --- resampling / intensity ---

Volume resample_isotropic(const Volume& v, double target_mm);
MaskVolume resample_mask_isotropic(const MaskVolume& m, double target_mm);

// Per-channel percentile clip to [P_lo, P_hi] then affine map onto [-1, 1].
// A constant channel maps to all zeros.
Volume normalize(const Volume& v, double lo_pct, double hi_pct);

// --- cropping / tiling ---

std::pair<Volume, MaskVolume> random_crop(const Volume& v, const MaskVolume& m,
                                          std::array<int, 3> size, uint64_t rng_seed);

std::pair<std::vector<Volume>, GridPartition> partition(const Volume& v,
                                                        std::array<int, 3> patch_size);

// Places block i at patch_origins[i]/scale; output spatial dims are the
// partitioned volume's dims divided by scale. Channel count follows the blocks.
Tensor reassemble(const std::vector<Tensor>& blocks, const GridPartition& g, int scale);

enum class SelectMode { train, eval };

Volume select_channels(const Volume& pre, const std::vector<Volume>& posts, SelectMode mode,
                       uint64_t rng_seed);

// Symmetric zero padding up to the next patch multiple (extra voxel goes to
// the high side); strip_pad reverses it after decoding.
std::pair<Volume, PadInfo> pad_to_multiple(const Volume& v, std::array<int, 3> patch_size);
Tensor strip_pad(const Tensor& t, const PadInfo& pad);

// --- mask morphology (6-connectivity) ---

Tens<uint8_t> dilate6(const Tens<uint8_t>& m, int iters);
Tens<uint8_t> erode6(const Tens<uint8_t>& m, int iters);
Tens<uint8_t> largest_component6(const Tens<uint8_t>& m);
// City-block distance from the mask, multi-source BFS: 0 on mask voxels,
// -1 where distance exceeds max_dist. Empty mask -> all -1.
std::vector<int> bfs_distance6(const Tens<uint8_t>& m, int max_dist);
size_t count_nonzero(const Tens<uint8_t>& m);

// --- I/O ---
// .svol: one-line JSON header, '\n', then the raw little-endian array in
// row-major order. Volumes are float32, masks uint8.

void save_svol(const std::string& path, const Volume& v);
Volume load_svol(const std::string& path);
void save_mask(const std::string& path, const MaskVolume& m);
MaskVolume load_mask(const std::string& path);

// Read-only NIfTI-1 import (.nii or .nii.gz), converted to a float32 Volume.
Volume import_nifti(const std::string& path);

}  // namespace synbt
