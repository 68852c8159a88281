#pragma once

#include "synbt/tensor.hpp"

namespace synbt {

// Separable [0.25, 0.5, 0.25] blur with zero padding, applied per channel.
// Zero padding keeps the operator self-adjoint, which the perceptual-loss
// backward pass relies on.
Tensor blur3(const Tensor& t, int iters = 1);

// Separable box blur with replicate borders; iterating approximates a
// Gaussian. Used to turn white noise into smooth random fields.
Tensor box_blur(const Tensor& t, int radius, int iters);

// Average-pool by an integer factor per axis (dims must divide).
Tensor avg_pool(const Tensor& t, int factor);

// Nearest-neighbor upsample by an integer factor per axis.
Tensor upsample_nearest(const Tensor& t, int factor);

}  // namespace synbt
