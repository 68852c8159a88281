#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "synbt/volume.hpp"

namespace synbt::bank {

// One harvested tumor shape, cropped to its tight bounding box.
struct TumorTemplate {
    Tens<uint8_t> mask;  // binary, bbox-tight
    std::string source_id;
    int64_t volume_voxels = 0;
};

struct PlacementConfig {
    std::array<double, 2> size_ratio_range{0.001, 0.05};  // fraction of breast volume
    int max_rejections = 50;
    int dilation_margin = 2;                    // voxels, for the fibro-overlap predicate
    std::array<double, 2> zoom_range{0.7, 1.3};
    std::array<double, 2> rotation_range{-30.0, 30.0};  // degrees
    double flip_prob = 0.5;                     // per-axis mirror chance during augment

    void validate() const;  // throws std::invalid_argument
};

// Splits every input mask into 6-connected components and crops each to its
// bounding box; empty inputs are skipped (counted in *skipped when non-null).
// All-empty input throws invalid-argument. source_id records input and
// component indices; duplicates are kept.
std::vector<TumorTemplate> build_bank(const std::vector<MaskVolume>& masks,
                                      int* skipped = nullptr);

// Random mirror / rotation / zoom of a template, nearest-neighbor resampled
// and re-binarized, then re-cropped tight. Deterministic per seed. Draws are
// retried up to max_rejections when the result comes out empty or
// disconnected; persistent failure throws PlacementInfeasibleError.
TumorTemplate augment(const TumorTemplate& t, const PlacementConfig& cfg, uint64_t seed);

// Rescales the template so its voxel count over the breast volume falls in
// size_ratio_range, then rejection-samples a center from fibroglandular
// tissue (eroded by the template half-extent when possible) until the placed
// mask is contained in the breast and >= 60% of it lies inside fibro dilated
// by dilation_margin. Deterministic per seed; PlacementInfeasibleError after
// max_rejections failed attempts.
MaskVolume place(const TumorTemplate& t, const MaskVolume& fibro, const MaskVolume& breast,
                 const PlacementConfig& cfg, uint64_t seed);

// Directory layout: template_NNN.svol masks plus bank.json (file, source_id,
// volume_voxels per entry).
void save_bank(const std::string& dir, const std::vector<TumorTemplate>& bank);
std::vector<TumorTemplate> load_bank(const std::string& dir);

}  // namespace synbt::bank
