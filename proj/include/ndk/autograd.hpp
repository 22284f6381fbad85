#pragma once

#include "ndk/kernels.hpp"
#include "ndk/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace ndk {

/// Per-thread switch for recording the tape; see NoGradGuard.
inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables tape recording for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// A tensor value recorded on the gradient tape. Copies share the same node.
template <typename Scalar>
class Var {
 public:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void accumulate(const Tensor<Scalar>& g) {
      if (grad.empty()) {
        grad = g;
      } else {
        grad.array() += g.array();
      }
    }
    void accumulate(Tensor<Scalar>&& g) {
      if (grad.empty()) {
        grad = std::move(g);
      } else {
        grad.array() += g.array();
      }
    }
  };

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& grad() { return node_->grad; }
  void zero_grad() {
    if (node_) node_->grad = Tensor<Scalar>();
  }

  const std::shared_ptr<Node>& node() const { return node_; }

  /// Builds a result node; parents and the backward closure are kept only when some parent needs a gradient.
  static Var make(Tensor<Scalar> value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    Var out(std::move(value));
    if (!grad_mode_enabled()) return out;
    for (const Var& p : parents) {
      if (p.requires_grad()) out.node_->requires_grad = true;
    }
    if (out.node_->requires_grad) {
      for (Var& p : parents) {
        if (p.defined()) out.node_->parents.push_back(p.node_);
      }
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across calls.
template <typename Scalar>
void backward(const Var<Scalar>& root);

/// Running statistics of a batch-normalization layer.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch
  double eps = 1e-5;

  explicit BatchNormState(Index channels = 0)
      : running_mean({channels}, Scalar(0)), running_var({channels}, Scalar(1)) {}
};

namespace ag {

template <typename Scalar>
Var<Scalar> conv3d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, const ConvParams& params);

template <typename Scalar>
Var<Scalar> deconv3d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                     const ConvParams& params);

template <typename Scalar>
Var<Scalar> maxpool3d(const Var<Scalar>& x, const Extent3& kernel, const Extent3& stride);

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, double factor);

/// Per-channel normalization over every axis except 1. Training mode uses batch statistics and
/// updates the running ones; otherwise the running statistics are applied.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormState<Scalar>& state, bool training);

/// [N, C, ...] -> [N, C]
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& logits);

/// Mean cross entropy of softmax(logits) against integer labels.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, const std::vector<int>& labels);

/// sum(x * weights); handy scalar probe for gradient checks.
template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& x, const Tensor<Scalar>& weights);

}  // namespace ag
}  // namespace ndk
