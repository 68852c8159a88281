#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "synbt/nn.hpp"
#include "synbt/volume.hpp"

namespace synbt::seg {

struct SegTrainConfig {
    std::array<int, 4> window{32, 48, 48, 2};  // x, y, z, channels
    int epochs = 30;
    float lr = 1e-4f;
    int batch = 1;
    double synth_fraction = 0.5;  // probability a training item is synthetic
    bool aug_flip = true;
    bool aug_rotation = true;  // quarter turns in y-z when square, else 180 only
    bool aug_intensity_scale = true;
    bool aug_intensity_shift = true;
    bool cache_synth = false;  // memoize generator outputs by seed
    int base_width = 8;
    int levels = 2;
    uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

// Dual-channel window -> per-voxel tumor probability.
struct SegModel {
    SegTrainConfig cfg;
    nn::UNet3d unet;
    bool trained = false;

    Tensor predict_prob(const Tensor& window2ch) const;
};

// Produces one synthetic training pair for the given seed, or throws
// PlacementInfeasibleError when the instance cannot be built; the trainer
// then falls back to a real item.
using SynthGenerator = std::function<std::pair<Volume, MaskVolume>(uint64_t seed)>;

struct SegTrainStats {
    std::vector<double> train_loss;  // per-epoch mean
    std::vector<double> val_dice;    // per-epoch, thresholded at 0.5
    int synth_requested = 0;         // calls into the generator
    int synth_failures = 0;          // infeasible draws that fell back to real
    int best_epoch = -1;
    double best_val_dice = -1.0;
};

// Geometric augmentations move image and mask together; intensity
// augmentations touch the image only. Exposed for the pairing tests.
void augment_item(Tensor& image, Tens<uint8_t>& mask, const SegTrainConfig& cfg, Rng& rng);

// Joint real + on-the-fly synthetic training. The last fifth of `vols`
// (at least one item) is held out as the validation split; the checkpoint
// with the best validation Dice is the returned model.
SegModel train_segmentation(const std::vector<Volume>& vols,
                            const std::vector<MaskVolume>& tumors,
                            const SynthGenerator& synth_gen,
                            const SegTrainConfig& cfg,
                            SegTrainStats* stats = nullptr);

// Clamped tiling starts: 0, stride, ... with the final window flush against
// the high edge; every start satisfies start + w <= dim.
std::vector<int> window_starts(int dim, int w, int stride);

using WindowPredictor = std::function<Tensor(const Tensor&)>;  // window -> probabilities

// Tiles the volume with stride window*(1-overlap_frac), averages per-voxel
// probabilities over covering windows (double accumulation), thresholds at
// 0.5. Volumes smaller than the window are padded symmetrically and the
// result is cropped back.
MaskVolume sliding_window_infer(const WindowPredictor& predict, const Volume& v,
                                std::array<int, 4> window, double overlap_frac);
MaskVolume sliding_window_infer(const SegModel& model, const Volume& v,
                                double overlap_frac = 0.25);

}  // namespace synbt::seg
