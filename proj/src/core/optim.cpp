#include "ndk/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ndk {

template <typename Scalar>
void sgd_step(std::span<Parameter<Scalar>* const> params, const SgdConfig& config) {
  for (const auto* p : params) {
    if (!p->value.has_grad()) throw std::invalid_argument("parameter '" + p->name + "' has no gradient");
  }
  const auto mu = static_cast<Scalar>(config.momentum);
  const auto lambda = static_cast<Scalar>(config.weight_decay);
  const auto lr = static_cast<Scalar>(config.lr);
  for (auto* p : params) {
    auto w = p->value.mutable_value().array();
    auto v = p->momentum.array();
    v = mu * v + p->value.grad().array() + lambda * w;
    w -= lr * v;
    p->value.zero_grad();
  }
}

template <typename Scalar>
double clip_grad_norm(std::span<Parameter<Scalar>* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (p->value.has_grad()) sq += p->value.grad().array().template cast<double>().square().sum();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto f = static_cast<Scalar>(max_norm / norm);
    for (auto* p : params) {
      if (p->value.has_grad()) p->value.grad().array() *= f;
    }
  }
  return norm;
}

double LrSchedule::at(int epoch) const {
  int steps = 0;
  if (step_every > 0) {
    steps = epoch / step_every;
  } else {
    for (int m : milestones) steps += epoch >= m ? 1 : 0;
  }
  return base * std::pow(gamma, steps);
}

template void sgd_step(std::span<Parameter<float>* const>, const SgdConfig&);
template void sgd_step(std::span<Parameter<double>* const>, const SgdConfig&);
template double clip_grad_norm(std::span<Parameter<float>* const>, double);
template double clip_grad_norm(std::span<Parameter<double>* const>, double);

}  // namespace ndk
