#include "ndk/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ndk {

namespace {

template <typename Scalar>
void check_same_size(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (a.numel() != b.numel()) {
    throw std::invalid_argument(std::string(what) + ": prediction " + shape_str(a.shape()) + " vs target " +
                                shape_str(b.shape()));
  }
}

template <typename Scalar>
void check_binary_labels(const Tensor<Scalar>& label) {
  for (Index i = 0; i < label.numel(); ++i) {
    if (label[i] != Scalar(0) && label[i] != Scalar(1)) {
      throw std::invalid_argument("binary label out of range at index " + std::to_string(i));
    }
  }
}

template <typename Scalar>
void apply_reduction(LossResult<Scalar>& r, Index n, Reduction reduction) {
  if (reduction == Reduction::Mean && n > 0) {
    r.value /= static_cast<Scalar>(n);
    r.grad.array() /= static_cast<Scalar>(n);
  }
}

}  // namespace

template <typename Scalar>
LossResult<Scalar> smooth_l1(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Reduction reduction) {
  check_same_size(pred, target, "smooth_l1");
  LossResult<Scalar> r{Scalar(0), Tensor<Scalar>(pred.shape())};
  for (Index i = 0; i < pred.numel(); ++i) {
    const Scalar x = pred[i] - target[i];
    if (std::abs(x) < Scalar(1)) {
      r.value += Scalar(0.5) * x * x;
      r.grad[i] = x;
    } else {
      r.value += std::abs(x) - Scalar(0.5);
      r.grad[i] = x > 0 ? Scalar(1) : Scalar(-1);
    }
  }
  apply_reduction(r, pred.numel(), reduction);
  return r;
}

template <typename Scalar>
LossResult<Scalar> bce(const Tensor<Scalar>& prob, const Tensor<Scalar>& label, Reduction reduction) {
  check_same_size(prob, label, "bce");
  check_binary_labels(label);
  const Scalar lo = static_cast<Scalar>(kBceEps), hi = static_cast<Scalar>(1.0 - kBceEps);
  LossResult<Scalar> r{Scalar(0), Tensor<Scalar>(prob.shape())};
  for (Index i = 0; i < prob.numel(); ++i) {
    const Scalar p = std::clamp(prob[i], lo, hi);
    const Scalar y = label[i];
    r.value -= y * std::log(p) + (1 - y) * std::log(1 - p);
    // Zero gradient where the clamp is active.
    r.grad[i] = (prob[i] > lo && prob[i] < hi) ? (p - y) / (p * (1 - p)) : Scalar(0);
  }
  apply_reduction(r, prob.numel(), reduction);
  return r;
}

template <typename Scalar>
LossResult<Scalar> bce_with_logits(const Tensor<Scalar>& logits, const Tensor<Scalar>& label, Reduction reduction) {
  check_same_size(logits, label, "bce_with_logits");
  check_binary_labels(label);
  const Scalar lo = static_cast<Scalar>(kBceEps), hi = static_cast<Scalar>(1.0 - kBceEps);
  LossResult<Scalar> r{Scalar(0), Tensor<Scalar>(logits.shape())};
  for (Index i = 0; i < logits.numel(); ++i) {
    const Scalar z = logits[i];
    const Scalar y = label[i];
    const Scalar p = sigmoid(z);
    // log(p) and log(1-p) through softplus, clamped at the same epsilon as bce.
    const Scalar log_p = std::max(-std::log1p(std::exp(-std::abs(z))) + std::min(z, Scalar(0)), std::log(lo));
    const Scalar log_q = std::max(-std::log1p(std::exp(-std::abs(z))) - std::max(z, Scalar(0)), std::log(1 - hi));
    r.value -= y * log_p + (1 - y) * log_q;
    r.grad[i] = p - y;
  }
  apply_reduction(r, logits.numel(), reduction);
  return r;
}

template <typename Scalar>
LossResult<Scalar> softmax_ce(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_ce expects [N, K] logits");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw std::invalid_argument("softmax_ce: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                                " rows");
  }
  LossResult<Scalar> r{Scalar(0), Tensor<Scalar>(logits.shape())};
  for (Index row = 0; row < n; ++row) {
    const int label = labels[static_cast<std::size_t>(row)];
    if (label < 0 || label >= k) {
      throw std::invalid_argument("class label " + std::to_string(label) + " out of range [0, " + std::to_string(k) +
                                  ")");
    }
    const Scalar* z = logits.data() + row * k;
    const Scalar m = *std::max_element(z, z + k);
    Scalar total = 0;
    for (Index c = 0; c < k; ++c) total += std::exp(z[c] - m);
    const Scalar log_total = std::log(total) + m;
    r.value += log_total - z[label];
    for (Index c = 0; c < k; ++c) r.grad[row * k + c] = std::exp(z[c] - log_total) - (c == label ? 1 : 0);
  }
  apply_reduction(r, n, Reduction::Mean);
  return r;
}

#define NDK_INSTANTIATE_LOSSES(S)                                                                   \
  template LossResult<S> smooth_l1(const Tensor<S>&, const Tensor<S>&, Reduction);                  \
  template LossResult<S> bce(const Tensor<S>&, const Tensor<S>&, Reduction);                        \
  template LossResult<S> bce_with_logits(const Tensor<S>&, const Tensor<S>&, Reduction);            \
  template LossResult<S> softmax_ce(const Tensor<S>&, const std::vector<int>&);

NDK_INSTANTIATE_LOSSES(float)
NDK_INSTANTIATE_LOSSES(double)

}  // namespace ndk
