#include "ndk/autograd.hpp"

#include "ndk/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace ndk {

template <typename Scalar>
void backward(const Var<Scalar>& root) {
  using Node = typename Var<Scalar>::Node;
  if (!root.defined()) throw std::invalid_argument("backward on an undefined variable");
  if (root.value().numel() != 1) {
    throw std::invalid_argument("backward expects a scalar root, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor<Scalar>(root.shape(), Scalar(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

namespace ag {

template <typename Scalar>
Var<Scalar> conv3d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   const ConvParams& params) {
  Tensor<Scalar> out = ndk::conv3d(x.value(), weight.value(), bias.defined() ? &bias.value() : nullptr, params);
  const bool has_bias = bias.defined();
  std::vector<Var<Scalar>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var<Scalar>::make(std::move(out), parents, [params, has_bias](typename Var<Scalar>::Node& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    if (px.requires_grad) px.accumulate(conv3d_grad_input(n.grad, pw.value, px.value.shape(), params));
    if (pw.requires_grad || (has_bias && n.parents[2]->requires_grad)) {
      Tensor<Scalar> gw(pw.value.shape());
      Tensor<Scalar> gb;
      if (has_bias) gb = Tensor<Scalar>(n.parents[2]->value.shape());
      conv3d_grad_weight(px.value, n.grad, params, gw, has_bias ? &gb : nullptr);
      if (pw.requires_grad) pw.accumulate(std::move(gw));
      if (has_bias && n.parents[2]->requires_grad) n.parents[2]->accumulate(std::move(gb));
    }
  });
}

template <typename Scalar>
Var<Scalar> deconv3d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                     const ConvParams& params) {
  Tensor<Scalar> out = ndk::deconv3d(x.value(), weight.value(), bias.defined() ? &bias.value() : nullptr, params);
  const bool has_bias = bias.defined();
  std::vector<Var<Scalar>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var<Scalar>::make(std::move(out), parents, [params, has_bias](typename Var<Scalar>::Node& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    // deconv(x) = conv^T(x): d/dx is the forward conv, d/dw swaps the roles of input and gradient.
    if (px.requires_grad) px.accumulate(ndk::conv3d<Scalar>(n.grad, pw.value, nullptr, params));
    if (pw.requires_grad) {
      Tensor<Scalar> gw(pw.value.shape());
      conv3d_grad_weight<Scalar>(n.grad, px.value, params, gw, nullptr);
      pw.accumulate(std::move(gw));
    }
    if (has_bias && n.parents[2]->requires_grad) {
      const Index c = n.grad.dim(1);
      const Index spatial = n.grad.numel() / (n.grad.dim(0) * c);
      Tensor<Scalar> gb({c});
      for (Index b = 0; b < n.grad.dim(0); ++b) {
        for (Index ch = 0; ch < c; ++ch) {
          const Scalar* row = n.grad.data() + (b * c + ch) * spatial;
          for (Index i = 0; i < spatial; ++i) gb[ch] += row[i];
        }
      }
      n.parents[2]->accumulate(std::move(gb));
    }
  });
}

template <typename Scalar>
Var<Scalar> maxpool3d(const Var<Scalar>& x, const Extent3& kernel, const Extent3& stride) {
  auto pooled = ndk::maxpool3d(x.value(), kernel, stride);
  auto argmax = std::make_shared<std::vector<Index>>(std::move(pooled.argmax));
  return Var<Scalar>::make(std::move(pooled.output), {x}, [argmax](typename Var<Scalar>::Node& n) {
    auto& px = *n.parents[0];
    px.accumulate(maxpool3d_backward(n.grad, *argmax, px.value.shape()));
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  Tensor<Scalar> out = ndk::linear(x.value(), weight.value(), bias.defined() ? &bias.value() : nullptr);
  const bool has_bias = bias.defined();
  std::vector<Var<Scalar>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var<Scalar>::make(std::move(out), parents, [has_bias](typename Var<Scalar>::Node& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    const Index batch = px.value.dim(0), in = px.value.dim(1), out_f = pw.value.dim(0);
    const auto g = n.grad.matrix(batch, out_f);
    if (px.requires_grad) {
      Tensor<Scalar> gx(px.value.shape());
      gx.matrix(batch, in).noalias() = g * pw.value.matrix(out_f, in);
      px.accumulate(std::move(gx));
    }
    if (pw.requires_grad) {
      Tensor<Scalar> gw(pw.value.shape());
      gw.matrix(out_f, in).noalias() = g.transpose() * px.value.matrix(batch, in);
      pw.accumulate(std::move(gw));
    }
    if (has_bias && n.parents[2]->requires_grad) {
      Tensor<Scalar> gb({out_f});
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(gb.data(), out_f) = g.colwise().sum();
      n.parents[2]->accumulate(std::move(gb));
    }
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  return Var<Scalar>::make(ndk::relu(x.value()), {x}, [](typename Var<Scalar>::Node& n) {
    auto& px = *n.parents[0];
    Tensor<Scalar> g = n.grad;
    g.array() = (px.value.array() > Scalar(0)).select(g.array(), Scalar(0));
    px.accumulate(std::move(g));
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<Scalar> out = a.value();
  out.array() += b.value().array();
  return Var<Scalar>::make(std::move(out), {a, b}, [](typename Var<Scalar>::Node& n) {
    for (auto& p : n.parents) {
      if (p->requires_grad) p->accumulate(n.grad);
    }
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, double factor) {
  Tensor<Scalar> out = x.value();
  const auto f = static_cast<Scalar>(factor);
  out.array() *= f;
  return Var<Scalar>::make(std::move(out), {x}, [f](typename Var<Scalar>::Node& n) {
    Tensor<Scalar> g = n.grad;
    g.array() *= f;
    n.parents[0]->accumulate(std::move(g));
  });
}

template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormState<Scalar>& state, bool training) {
  const Tensor<Scalar>& in = x.value();
  if (in.rank() < 2) throw std::invalid_argument("batch_norm expects [N, C, ...]");
  const Index batch = in.dim(0), channels = in.dim(1);
  const Index spatial = in.numel() / (batch * channels);
  const Index count = batch * spatial;
  if (gamma.value().numel() != channels || beta.value().numel() != channels) {
    throw std::invalid_argument("batch_norm: affine parameters do not match " + std::to_string(channels) +
                                " channels");
  }
  if (state.running_mean.numel() != channels) {
    throw std::invalid_argument("batch_norm: running statistics do not match channel count");
  }

  auto xhat = std::make_shared<Tensor<Scalar>>(in.shape());
  auto inv_std = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(channels));
  Tensor<Scalar> out(in.shape());
  for (Index c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (training) {
      for (Index b = 0; b < batch; ++b) {
        const Scalar* row = in.data() + (b * channels + c) * spatial;
        for (Index i = 0; i < spatial; ++i) mean += row[i];
      }
      mean /= static_cast<double>(count);
      for (Index b = 0; b < batch; ++b) {
        const Scalar* row = in.data() + (b * channels + c) * spatial;
        for (Index i = 0; i < spatial; ++i) {
          const double d = row[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      state.running_mean[c] = static_cast<Scalar>(state.momentum * state.running_mean[c] + (1 - state.momentum) * mean);
      state.running_var[c] = static_cast<Scalar>(state.momentum * state.running_var[c] + (1 - state.momentum) * unbiased);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const Scalar istd = static_cast<Scalar>(1.0 / std::sqrt(var + state.eps));
    (*inv_std)[static_cast<std::size_t>(c)] = istd;
    const Scalar g = gamma.value()[c], bt = beta.value()[c], m = static_cast<Scalar>(mean);
    for (Index b = 0; b < batch; ++b) {
      const Index off = (b * channels + c) * spatial;
      for (Index i = 0; i < spatial; ++i) {
        const Scalar h = (in[off + i] - m) * istd;
        (*xhat)[off + i] = h;
        out[off + i] = g * h + bt;
      }
    }
  }

  return Var<Scalar>::make(std::move(out), {x, gamma, beta},
                           [xhat, inv_std, training, batch, channels, spatial, count](typename Var<Scalar>::Node& n) {
                             auto& px = *n.parents[0];
                             auto& pg = *n.parents[1];
                             auto& pb = *n.parents[2];
                             Tensor<Scalar> gx(px.value.shape());
                             Tensor<Scalar> gg({channels});
                             Tensor<Scalar> gb({channels});
                             for (Index c = 0; c < channels; ++c) {
                               double sum_g = 0.0, sum_gh = 0.0;
                               for (Index b = 0; b < batch; ++b) {
                                 const Index off = (b * channels + c) * spatial;
                                 for (Index i = 0; i < spatial; ++i) {
                                   sum_g += n.grad[off + i];
                                   sum_gh += n.grad[off + i] * (*xhat)[off + i];
                                 }
                               }
                               gg[c] = static_cast<Scalar>(sum_gh);
                               gb[c] = static_cast<Scalar>(sum_g);
                               if (!px.requires_grad) continue;
                               const Scalar gamma_c = pg.value[c];
                               const Scalar istd = (*inv_std)[static_cast<std::size_t>(c)];
                               const Scalar mean_g = static_cast<Scalar>(sum_g / count);
                               const Scalar mean_gh = static_cast<Scalar>(sum_gh / count);
                               for (Index b = 0; b < batch; ++b) {
                                 const Index off = (b * channels + c) * spatial;
                                 for (Index i = 0; i < spatial; ++i) {
                                   const Scalar g = n.grad[off + i];
                                   gx[off + i] = training
                                                     ? gamma_c * istd * (g - mean_g - (*xhat)[off + i] * mean_gh)
                                                     : gamma_c * istd * g;
                                 }
                               }
                             }
                             if (px.requires_grad) px.accumulate(std::move(gx));
                             if (pg.requires_grad) pg.accumulate(std::move(gg));
                             if (pb.requires_grad) pb.accumulate(std::move(gb));
                           });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  const Tensor<Scalar>& in = x.value();
  if (in.rank() < 3) throw std::invalid_argument("global_avg_pool expects [N, C, ...]");
  const Index batch = in.dim(0), channels = in.dim(1);
  const Index spatial = in.numel() / (batch * channels);
  Tensor<Scalar> out({batch, channels});
  for (Index r = 0; r < batch * channels; ++r) {
    Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> row(in.data() + r * spatial, spatial);
    out[r] = row.mean();
  }
  return Var<Scalar>::make(std::move(out), {x}, [spatial](typename Var<Scalar>::Node& n) {
    auto& px = *n.parents[0];
    Tensor<Scalar> g(px.value.shape());
    for (Index r = 0; r < n.grad.numel(); ++r) {
      const Scalar v = n.grad[r] / static_cast<Scalar>(spatial);
      std::fill(g.data() + r * spatial, g.data() + (r + 1) * spatial, v);
    }
    px.accumulate(std::move(g));
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  return Var<Scalar>::make(std::move(out), {x}, [](typename Var<Scalar>::Node& n) {
    auto& px = *n.parents[0];
    px.accumulate(n.grad.reshaped(px.value.shape()));
  });
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& logits) {
  auto probs = std::make_shared<Tensor<Scalar>>(ndk::softmax(logits.value()));
  Tensor<Scalar> out = *probs;
  return Var<Scalar>::make(std::move(out), {logits}, [probs](typename Var<Scalar>::Node& n) {
    auto& px = *n.parents[0];
    const Index rows = probs->dim(0), k = probs->dim(1);
    Tensor<Scalar> g(probs->shape());
    for (Index r = 0; r < rows; ++r) {
      Scalar inner = 0;
      for (Index c = 0; c < k; ++c) inner += n.grad[r * k + c] * (*probs)[r * k + c];
      for (Index c = 0; c < k; ++c) g[r * k + c] = (*probs)[r * k + c] * (n.grad[r * k + c] - inner);
    }
    px.accumulate(std::move(g));
  });
}

template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, const std::vector<int>& labels) {
  auto loss = ndk::softmax_ce(logits.value(), labels);
  auto grad = std::make_shared<Tensor<Scalar>>(std::move(loss.grad));
  return Var<Scalar>::make(Tensor<Scalar>({1}, loss.value), {logits}, [grad](typename Var<Scalar>::Node& n) {
    Tensor<Scalar> g = *grad;
    g.array() *= n.grad[0];
    n.parents[0]->accumulate(std::move(g));
  });
}

template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& x, const Tensor<Scalar>& weights) {
  if (weights.numel() != x.value().numel()) throw std::invalid_argument("weighted_sum: size mismatch");
  auto w = std::make_shared<Tensor<Scalar>>(weights.reshaped(x.shape()));
  Tensor<Scalar> out({1}, (x.value().array() * w->array()).sum());
  return Var<Scalar>::make(std::move(out), {x}, [w](typename Var<Scalar>::Node& n) {
    Tensor<Scalar> g = *w;
    g.array() *= n.grad[0];
    n.parents[0]->accumulate(std::move(g));
  });
}

}  // namespace ag

#define NDK_INSTANTIATE_AUTOGRAD(S)                                                                             \
  template void backward(const Var<S>&);                                                                       \
  namespace ag {                                                                                               \
  template Var<S> conv3d(const Var<S>&, const Var<S>&, const Var<S>&, const ConvParams&);                       \
  template Var<S> deconv3d(const Var<S>&, const Var<S>&, const Var<S>&, const ConvParams&);                     \
  template Var<S> maxpool3d(const Var<S>&, const Extent3&, const Extent3&);                                    \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                          \
  template Var<S> relu(const Var<S>&);                                                                         \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                           \
  template Var<S> scale(const Var<S>&, double);                                                                \
  template Var<S> batch_norm(const Var<S>&, const Var<S>&, const Var<S>&, BatchNormState<S>&, bool);            \
  template Var<S> global_avg_pool(const Var<S>&);                                                              \
  template Var<S> reshape(const Var<S>&, Shape);                                                               \
  template Var<S> softmax(const Var<S>&);                                                                      \
  template Var<S> softmax_cross_entropy(const Var<S>&, const std::vector<int>&);                                \
  template Var<S> weighted_sum(const Var<S>&, const Tensor<S>&);                                               \
  }

NDK_INSTANTIATE_AUTOGRAD(float)
NDK_INSTANTIATE_AUTOGRAD(double)

}  // namespace ndk
