#pragma once

#include "ndk/autograd.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ndk {

struct GradCheckOptions {
  double step = 1e-5;
  Index samples_per_leaf = 24;  // coordinates sampled per leaf; <= 0 checks every coordinate
  std::uint64_t seed = 0;
  /// Coordinates for which this returns true are not sampled (e.g. known kinks).
  std::function<bool(std::size_t leaf, Index index)> skip = nullptr;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  Index checked = 0;
  Index skipped = 0;
};

using ScalarFn = std::function<Var<double>(std::span<const Var<double>>)>;

/// Compares analytic gradients of a scalar function against central differences in 64-bit.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8). Throws NonFiniteError on NaN/Inf.
GradCheckReport grad_check(const ScalarFn& fn, const std::vector<Tensor<double>>& leaves,
                           const GradCheckOptions& options = {});

/// Marks input voxels whose pooling window is within `margin` of a tie for the maximum.
std::vector<bool> maxpool_tie_mask(const Tensor<double>& input, const Extent3& kernel, const Extent3& stride,
                                   double margin);

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

/// Checks every autograd op on random 64-bit inputs plus a composed conv -> pool -> fc -> softmax
/// network. Max-pool ties and ReLU inputs near zero are excluded from sampling.
std::vector<NamedGradCheck> gradcheck_suite(std::uint64_t seed, Index samples_per_leaf = 24);

}  // namespace ndk
