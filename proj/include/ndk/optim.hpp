#pragma once

#include "ndk/layers.hpp"

#include <span>
#include <vector>

namespace ndk {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// v <- mu * v + g + lambda * w;  w <- w - lr * v;  gradients are cleared afterwards.
/// Throws if any parameter has no gradient.
template <typename Scalar>
void sgd_step(std::span<Parameter<Scalar>* const> params, const SgdConfig& config);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the norm before
/// clipping. Parameters without a gradient are skipped.
template <typename Scalar>
double clip_grad_norm(std::span<Parameter<Scalar>* const> params, double max_norm);

/// Piecewise-constant learning rate: base * gamma^(number of milestones passed), or, when
/// step_every > 0, base * gamma^(epoch / step_every).
struct LrSchedule {
  double base = 0.1;
  std::vector<int> milestones;
  double gamma = 0.5;
  int step_every = 0;

  double at(int epoch) const;
};

}  // namespace ndk
