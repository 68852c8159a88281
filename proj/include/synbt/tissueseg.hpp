#pragma once

#include <cstdint>
#include <vector>

#include "synbt/nn.hpp"
#include "synbt/volume.hpp"

namespace synbt::tissue {

struct TissueTrainConfig {
    int steps = 300;
    float lr = 1e-3f;
    int base_width = 8;
    int levels = 2;
    uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

// Fibroglandular-tissue segmenter over a single input channel; produces a
// per-voxel probability via a sigmoid on the network logits.
struct TissueModel {
    TissueTrainConfig cfg;
    nn::UNet3d unet;  // 1 channel in, 1 logit out
    bool trained = false;

    // input must be single-channel; dims are padded internally to the
    // network's stride multiple and cropped back
    Tensor predict_prob(const Tensor& single_ch) const;
};

struct TissueTrainStats {
    std::vector<double> loss;     // per-step combined dice + cross-entropy
    int renders_used = 0;         // synthetic images fed to the network
    int real_intensity_reads = 0; // real volumes fed to the network (must stay 0)
};

// Label map for synthetic rendering: 0 = air (relative intensity cutoff on
// the first channel), 1 = fibroglandular tissue, 2..k+1 = k-means clusters of
// the remaining tissue voxels with k drawn uniformly from {2..8} per seed.
MaskVolume make_training_label_map(const MaskVolume& fibro, const Volume& body, uint64_t seed);

// Soft-Dice + binary cross-entropy on sigmoid probabilities; dlogits, when
// non-null, receives the gradient. Exposed for the training tests.
double dice_bce_loss(const Tensor& logits, const Tens<uint8_t>& target, Tensor* dlogits);

// Every step renders a fresh random-mixture image from a training label map
// and fits the fibro mask; the network never sees real intensities.
TissueModel train_tissue_model(const std::vector<MaskVolume>& fibro_masks,
                               const std::vector<Volume>& bodies,
                               const TissueTrainConfig& cfg,
                               TissueTrainStats* stats = nullptr);

// Strict p > thr binarization; idempotent on maps that are already 0/1.
MaskVolume threshold_prob(const Tensor& prob, const std::array<double, 3>& spacing,
                          float thr = 0.5f);

// Pre-contrast channel -> probability -> binary mask at threshold 0.5.
MaskVolume segment_tissue(const Volume& v, const TissueModel& model);

// Morphological opening (radius 1) then removal of connected components
// smaller than min_component. Throws EmptyRoiError when nothing survives.
MaskVolume postprocess_roi(const MaskVolume& fibro, int min_component = 27);

}  // namespace synbt::tissue
