#include "ndk/gradcheck.hpp"

#include "ndk/kernels.hpp"

#include <cmath>
#include <random>

namespace ndk {

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (Index i = 0; i < t.numel(); ++i) t[i] = n(rng);
  return t;
}

/// True when every ReLU input is at least `margin` from zero and every pooling window with a
/// positive maximum leads its runner-up by at least `margin` (2x2x2 windows, stride 2).
bool kink_free(const Tensor<double>& pre, double margin) {
  const Shape& s = pre.shape();
  for (Index i = 0; i < pre.numel(); ++i)
    if (std::abs(pre[i]) < margin) return false;
  for (Index nc = 0; nc < s[0] * s[1]; ++nc)
    for (Index z = 0; z + 1 < s[2]; z += 2)
      for (Index y = 0; y + 1 < s[3]; y += 2)
        for (Index x = 0; x + 1 < s[4]; x += 2) {
          double first = 0.0, second = 0.0;
          for (Index k = 0; k < 8; ++k) {
            const double v = std::max(0.0, pre[((nc * s[2] + z + k / 4) * s[3] + y + k / 2 % 2) * s[4] + x + k % 2]);
            if (v > first) second = first, first = v;
            else second = std::max(second, v);
          }
          if (first > 0.0 && first - second < margin) return false;
        }
  return true;
}

}  // namespace

std::vector<NamedGradCheck> gradcheck_suite(std::uint64_t seed, Index samples_per_leaf) {
  std::mt19937_64 rng(seed);
  const GradCheckOptions opts{.samples_per_leaf = samples_per_leaf, .seed = seed};
  std::vector<NamedGradCheck> out;
  using V = std::span<const Var<double>>;
  auto probe_of = [&](const Shape& s) { return random_tensor(s, rng); };

  {
    const ConvParams p{{2, 1, 1}, {1, 1, 0}};
    const auto probe = probe_of({2, 3, 3, 4, 3});
    out.push_back({"conv3d", grad_check([&](V v) { return ag::weighted_sum(ag::conv3d(v[0], v[1], v[2], p), probe); },
                                        {random_tensor({2, 2, 5, 4, 5}, rng), random_tensor({3, 2, 3, 3, 3}, rng),
                                         random_tensor({3}, rng)},
                                        opts)});
  }
  {
    const ConvParams p{Extent3::cube(2), Extent3::cube(0)};
    const auto probe = probe_of({1, 2, 4, 6, 4});
    out.push_back({"deconv3d", grad_check([&](V v) { return ag::weighted_sum(ag::deconv3d(v[0], v[1], v[2], p), probe); },
                                          {random_tensor({1, 3, 2, 3, 2}, rng), random_tensor({3, 2, 2, 2, 2}, rng),
                                           random_tensor({2}, rng)},
                                          opts)});
  }
  {
    const Tensor<double> x = random_tensor({2, 2, 4, 4, 4}, rng);
    const auto mask = maxpool_tie_mask(x, Extent3::cube(2), Extent3::cube(2), 1e-4);
    const auto probe = probe_of({2, 2, 2, 2, 2});
    GradCheckOptions o = opts;
    o.skip = [&](std::size_t, Index i) { return mask[static_cast<std::size_t>(i)]; };
    out.push_back({"maxpool3d", grad_check([&](V v) {
                                             return ag::weighted_sum(ag::maxpool3d(v[0], Extent3::cube(2), Extent3::cube(2)), probe);
                                           },
                                           {x}, o)});
  }
  {
    const auto probe = probe_of({4, 3});
    out.push_back({"linear", grad_check([&](V v) { return ag::weighted_sum(ag::linear(v[0], v[1], v[2]), probe); },
                                        {random_tensor({4, 5}, rng), random_tensor({3, 5}, rng), random_tensor({3}, rng)},
                                        opts)});
  }
  {
    const Tensor<double> x = random_tensor({3, 7}, rng);
    const auto probe = probe_of({3, 7});
    GradCheckOptions o = opts;
    o.skip = [&](std::size_t, Index i) { return std::abs(x[i]) < 1e-3; };
    out.push_back({"relu", grad_check([&](V v) { return ag::weighted_sum(ag::relu(v[0]), probe); }, {x}, o)});
  }
  {
    const auto probe = probe_of({2, 6});
    out.push_back({"add", grad_check([&](V v) { return ag::weighted_sum(ag::add(v[0], v[1]), probe); },
                                     {random_tensor({2, 6}, rng), random_tensor({2, 6}, rng)}, opts)});
    out.push_back({"scale", grad_check([&](V v) { return ag::weighted_sum(ag::scale(v[0], -0.37), probe); },
                                       {random_tensor({2, 6}, rng)}, opts)});
  }
  {
    const auto probe = probe_of({3, 2, 2, 3, 2});
    BatchNormState<double> state(2);
    out.push_back({"batch_norm", grad_check(
                                     [&](V v) {
                                       return ag::weighted_sum(ag::batch_norm(v[0], v[1], v[2], state, true), probe);
                                     },
                                     {random_tensor({3, 2, 2, 3, 2}, rng, 2.0), random_tensor({2}, rng),
                                      random_tensor({2}, rng)},
                                     opts)});
  }
  {
    const auto probe = probe_of({2, 3});
    out.push_back({"global_avg_pool", grad_check([&](V v) { return ag::weighted_sum(ag::global_avg_pool(v[0]), probe); },
                                                 {random_tensor({2, 3, 2, 3, 2}, rng)}, opts)});
  }
  {
    const auto probe = probe_of({6, 4});
    out.push_back({"reshape", grad_check([&](V v) { return ag::weighted_sum(ag::reshape(v[0], {6, 4}), probe); },
                                         {random_tensor({2, 3, 2, 2, 1}, rng)}, opts)});
  }
  {
    const auto probe = probe_of({3, 5});
    out.push_back({"softmax", grad_check([&](V v) { return ag::weighted_sum(ag::softmax(v[0]), probe); },
                                         {random_tensor({3, 5}, rng, 2.0)}, opts)});
    out.push_back({"softmax_cross_entropy",
                   grad_check([&](V v) { return ag::softmax_cross_entropy(v[0], {4, 0, 2}); },
                              {random_tensor({3, 5}, rng, 2.0)}, opts)});
  }
  {
    // conv -> relu -> max-pool -> fc -> softmax cross entropy, every parameter a leaf.
    const ConvParams same{Extent3::cube(1), Extent3::cube(1)};
    // Small fc weights keep the softmax away from saturation, where gradients sink below rounding.
    // Redraw until no finite-difference step can cross a ReLU or max-pool kink.
    std::vector<Tensor<double>> leaves;
    do {
      leaves = {random_tensor({2, 1, 4, 4, 4}, rng), random_tensor({3, 1, 3, 3, 3}, rng, 0.5), random_tensor({3}, rng, 0.1),
                random_tensor({3, 24}, rng, 0.1), random_tensor({3}, rng, 0.1)};
    } while (!kink_free(conv3d(leaves[0], leaves[1], &leaves[2], same), 1e-3));
    out.push_back({"conv_pool_fc_softmax",
                   grad_check(
                       [&](V v) {
                         auto h = ag::relu(ag::conv3d(v[0], v[1], v[2], same));
                         h = ag::maxpool3d(h, Extent3::cube(2), Extent3::cube(2));
                         h = ag::reshape(h, {2, h.value().numel() / 2});
                         return ag::softmax_cross_entropy(ag::linear(h, v[3], v[4]), {1, 2});
                       },
                       leaves, opts)});
  }
  return out;
}

}  // namespace ndk
