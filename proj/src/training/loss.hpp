#pragma once

#include "numerics/tensor.hpp"

namespace boxprompt::training {

inline constexpr double kProbClamp = 1e-7;

// Mean pixel-wise binary cross-entropy. `pred` is clamped to
// [1e-7, 1 - 1e-7] before the logarithms; no gradient flows where the clamp
// is active. With class_balanced, positive and negative pixels each carry half
// of the total weight (ignored when the target is all one class).
template <typename T>
num::Tensor<T> bce_loss(const num::Tensor<T>& pred, const num::Tensor<T>& target, bool class_balanced = false);

}  // namespace boxprompt::training
