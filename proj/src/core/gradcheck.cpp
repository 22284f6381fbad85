#include "ndk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ndk {

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor<double>>& leaves) {
  std::vector<Var<double>> vars;
  vars.reserve(leaves.size());
  for (const auto& t : leaves) vars.emplace_back(t, false);
  const Var<double> out = fn(vars);
  if (out.value().numel() != 1) throw std::invalid_argument("grad_check: function must return a scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite function value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, const std::vector<Tensor<double>>& leaves,
                           const GradCheckOptions& options) {
  std::vector<Var<double>> vars;
  vars.reserve(leaves.size());
  for (const auto& t : leaves) {
    t.require_finite("grad_check input");
    vars.emplace_back(t, true);
  }
  const Var<double> out = fn(vars);
  out.value().require_finite("grad_check forward");
  backward(out);

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  std::vector<Tensor<double>> probe = leaves;
  for (std::size_t leaf = 0; leaf < leaves.size(); ++leaf) {
    const Index n = leaves[leaf].numel();
    Tensor<double> analytic = vars[leaf].has_grad() ? vars[leaf].grad() : Tensor<double>(leaves[leaf].shape());
    analytic.require_finite("grad_check backward");

    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.samples_per_leaf > 0 && options.samples_per_leaf < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.samples_per_leaf));
    }
    for (Index idx : coords) {
      if (options.skip && options.skip(leaf, idx)) {
        ++report.skipped;
        continue;
      }
      const double orig = probe[leaf][idx];
      probe[leaf][idx] = orig + options.step;
      const double up = evaluate(fn, probe);
      probe[leaf][idx] = orig - options.step;
      const double down = evaluate(fn, probe);
      probe[leaf][idx] = orig;
      const double numeric = (up - down) / (2 * options.step);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.checked;
    }
  }
  return report;
}

std::vector<bool> maxpool_tie_mask(const Tensor<double>& input, const Extent3& kernel, const Extent3& stride,
                                   double margin) {
  const Extent3 in = spatial_extent(input.shape());
  const Extent3 out = conv_output_extent(in, kernel, {stride, Extent3::cube(0)});
  std::vector<bool> mask(static_cast<std::size_t>(input.numel()), false);
  const Index nc = input.dim(0) * input.dim(1);
  std::vector<Index> window;
  for (Index c = 0; c < nc; ++c) {
    const Index base = c * in.volume();
    for (Index z = 0; z < out.d; ++z) {
      for (Index y = 0; y < out.h; ++y) {
        for (Index x = 0; x < out.w; ++x) {
          window.clear();
          for (Index i = 0; i < kernel.d; ++i) {
            for (Index j = 0; j < kernel.h; ++j) {
              for (Index k = 0; k < kernel.w; ++k) {
                window.push_back(base + ((z * stride.d + i) * in.h + y * stride.h + j) * in.w + x * stride.w + k);
              }
            }
          }
          std::sort(window.begin(), window.end(), [&](Index a, Index b) { return input[a] > input[b]; });
          if (window.size() > 1 && input[window[0]] - input[window[1]] <= margin) {
            for (Index idx : window) mask[static_cast<std::size_t>(idx)] = true;
          }
        }
      }
    }
  }
  return mask;
}

}  // namespace ndk
