#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "synbt/volume.hpp"

namespace synbt {

// Procedural breast-like phantom: half-ellipsoid breast embedded at the x=0
// face, a blobby fibroglandular subregion, optional tumors inside it, and a
// contrast-enhanced post channel.
struct PhantomSpec {
    std::array<int, 3> size{32, 48, 48};
    std::array<double, 3> breast_axes{28.0, 20.0, 20.0};  // ellipsoid semi-axes, voxels
    double fibro_fraction = 0.25;                         // of breast volume, in (0,1)
    int tumor_count = 1;
    std::array<double, 2> tumor_radius_range{3.0, 4.5};  // voxels
    double noise_sigma = 0.02;
    double enhancement_gain = 1.8;  // post/pre ratio inside tumor

    void validate() const;  // throws std::invalid_argument
};

struct Phantom {
    Volume vol;        // channels (pre, post), raw positive intensities
    MaskVolume fibro;  // binary
    MaskVolume tumor;  // binary, zeros when tumor_count == 0
};

Phantom generate_phantom(const PhantomSpec& spec, uint64_t seed);

// Lloyd's k-means (k-means++ init, <= 100 iterations) over single-channel
// intensities. Output labels are 1..k ordered by ascending cluster mean. If
// the image has fewer distinct values than k, k is reduced to that count.
MaskVolume kmeans_labels(const Volume& v, int k, uint64_t seed);

// Label-to-image renderer: each label gets a random mean in [-1,1] and sigma
// in [0.01, 0.15]; voxels are mean + sigma * smoothed unit noise (noise
// clamped to +-4 before smoothing, so values stay within mean +- 4 sigma).
// sigma_override >= 0 forces every label's sigma (test hook); out_means, when
// non-null, receives the per-label means keyed by label value.
Volume gmm_render(const MaskVolume& labels, uint64_t seed, double sigma_override = -1.0,
                  std::vector<double>* out_means = nullptr);

}  // namespace synbt
