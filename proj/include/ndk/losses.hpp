#pragma once

#include "ndk/tensor.hpp"

#include <vector>

namespace ndk {

/// Probabilities are clamped to [kBceEps, 1 - kBceEps] before taking logs.
inline constexpr double kBceEps = 1e-7;

template <typename Scalar>
struct LossResult {
  Scalar value;
  Tensor<Scalar> grad;  // d value / d input, same shape as the input
};

enum class Reduction { Sum, Mean };

/// 0.5 x^2 if |x| < 1 else |x| - 0.5, with x = pred - target.
template <typename Scalar>
LossResult<Scalar> smooth_l1(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                             Reduction reduction = Reduction::Mean);

/// Binary cross entropy on probabilities; labels must be 0 or 1.
template <typename Scalar>
LossResult<Scalar> bce(const Tensor<Scalar>& prob, const Tensor<Scalar>& label, Reduction reduction = Reduction::Mean);

/// Same value as bce(sigmoid(logit)) with the gradient taken with respect to the logits.
template <typename Scalar>
LossResult<Scalar> bce_with_logits(const Tensor<Scalar>& logits, const Tensor<Scalar>& label,
                                   Reduction reduction = Reduction::Mean);

/// Mean cross entropy of the row-wise softmax of [N, K] logits.
template <typename Scalar>
LossResult<Scalar> softmax_ce(const Tensor<Scalar>& logits, const std::vector<int>& labels);

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
}

}  // namespace ndk
