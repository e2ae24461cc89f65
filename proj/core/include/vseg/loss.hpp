#pragma once

// Training losses. `prob` is either a one-channel foreground probability map
// (binary form) or a two-channel softmax map (categorical form, foreground
// last); `ref` is a one-channel 0/1 reference of matching batch and extents.

#include "vseg/autodiff.hpp"

namespace vseg {

inline constexpr Real kDiceSmooth = 1e-5;
inline constexpr Real kProbClamp = 1e-7;

// 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps) over the foreground
// channel of the whole batch.
Real soft_dice_loss(const Tensor& prob, const Tensor& ref);
// Voxel-mean cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
Real cross_entropy_loss(const Tensor& prob, const Tensor& ref);
// 0.5 * soft_dice_loss + 0.5 * cross_entropy_loss.
Real combined_loss(const Tensor& prob, const Tensor& ref);

namespace ad {

Var soft_dice_loss(Var prob, const Tensor& ref);
Var cross_entropy_loss(Var prob, const Tensor& ref);

struct LossTerms {
  Var dice;
  Var cross_entropy;
  Var combined;
};
LossTerms combined_loss(Var prob, const Tensor& ref);

}  // namespace ad
}  // namespace vseg
