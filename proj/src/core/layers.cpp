#include "ndk/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace ndk {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3d: return "conv3d";
    case LayerKind::Deconv3d: return "deconv3d";
    case LayerKind::MaxPool3d: return "maxpool3d";
    case LayerKind::Fc: return "fc";
    case LayerKind::Relu: return "relu";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Softmax: return "softmax";
  }
  return "unknown";
}

Shape infer_output_shape(const LayerSpec& spec, const Shape& input) {
  auto need_rank = [&](std::size_t rank) {
    if (input.size() != rank) {
      throw std::invalid_argument(std::string(to_string(spec.kind)) + " expects rank " + std::to_string(rank) +
                                  " input, got " + shape_str(input));
    }
  };
  auto need_channels = [&](Index c) {
    if (spec.in_channels > 0 && c != spec.in_channels) {
      throw std::invalid_argument(std::string(to_string(spec.kind)) + " expects " + std::to_string(spec.in_channels) +
                                  " input channels, got " + std::to_string(c));
    }
  };
  switch (spec.kind) {
    case LayerKind::Conv3d: {
      need_rank(5);
      need_channels(input[1]);
      const Extent3 out = conv_output_extent(spatial_extent(input), spec.kernel, {spec.stride, spec.padding});
      return {input[0], spec.out_channels, out.d, out.h, out.w};
    }
    case LayerKind::Deconv3d: {
      need_rank(5);
      need_channels(input[1]);
      const Extent3 out = deconv_output_extent(spatial_extent(input), spec.kernel, {spec.stride, spec.padding});
      return {input[0], spec.out_channels, out.d, out.h, out.w};
    }
    case LayerKind::MaxPool3d: {
      need_rank(5);
      const Extent3 out = conv_output_extent(spatial_extent(input), spec.kernel, {spec.stride, Extent3::cube(0)});
      return {input[0], input[1], out.d, out.h, out.w};
    }
    case LayerKind::Fc:
      need_rank(2);
      need_channels(input[1]);
      return {input[0], spec.out_channels};
    case LayerKind::BatchNorm:
      if (input.size() < 2) throw std::invalid_argument("batchnorm expects [N, C, ...]");
      need_channels(input[1]);
      return input;
    case LayerKind::Softmax:
      need_rank(2);
      return input;
    case LayerKind::Relu:
      return input;
  }
  throw std::invalid_argument("unknown layer kind");
}

Shape infer_output_shape(const std::vector<LayerSpec>& chain, Shape input) {
  for (const auto& spec : chain) input = infer_output_shape(spec, input);
  return input;
}

template <typename Scalar>
Tensor<Scalar> he_normal(Shape shape, Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(std::max<Index>(fan_in, 1))));
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Conv3d<Scalar>::Conv3d(const std::string& name, Index in_channels, Index out_channels, Extent3 kernel,
                       ConvParams p, std::mt19937_64& rng, bool with_bias)
    : weight(name + ".weight", he_normal<Scalar>({out_channels, in_channels, kernel.d, kernel.h, kernel.w},
                                                 in_channels * kernel.volume(), rng)),
      params(p) {
  if (with_bias) bias = Parameter<Scalar>(name + ".bias", Tensor<Scalar>({out_channels}));
}

template <typename Scalar>
Var<Scalar> Conv3d<Scalar>::operator()(const Var<Scalar>& x) const {
  return ag::conv3d(x, weight.value, bias.value, params);
}

template <typename Scalar>
void Conv3d<Scalar>::collect(StateCollector<Scalar>& out) {
  out.parameters.push_back(&weight);
  if (bias.value.defined()) out.parameters.push_back(&bias);
}

template <typename Scalar>
LayerSpec Conv3d<Scalar>::spec() const {
  const auto& s = weight.value.shape();
  return {LayerKind::Conv3d, {s[2], s[3], s[4]}, params.stride, params.padding, s[1], s[0]};
}

template <typename Scalar>
Deconv3d<Scalar>::Deconv3d(const std::string& name, Index in_channels, Index out_channels, Extent3 kernel,
                           ConvParams p, std::mt19937_64& rng, bool with_bias)
    : weight(name + ".weight", he_normal<Scalar>({in_channels, out_channels, kernel.d, kernel.h, kernel.w},
                                                 in_channels * kernel.volume() /
                                                     std::max<Index>(1, p.stride.volume()),
                                                 rng)),
      params(p) {
  if (with_bias) bias = Parameter<Scalar>(name + ".bias", Tensor<Scalar>({out_channels}));
}

template <typename Scalar>
Var<Scalar> Deconv3d<Scalar>::operator()(const Var<Scalar>& x) const {
  return ag::deconv3d(x, weight.value, bias.value, params);
}

template <typename Scalar>
void Deconv3d<Scalar>::collect(StateCollector<Scalar>& out) {
  out.parameters.push_back(&weight);
  if (bias.value.defined()) out.parameters.push_back(&bias);
}

template <typename Scalar>
LayerSpec Deconv3d<Scalar>::spec() const {
  const auto& s = weight.value.shape();
  return {LayerKind::Deconv3d, {s[2], s[3], s[4]}, params.stride, params.padding, s[0], s[1]};
}

template <typename Scalar>
Linear<Scalar>::Linear(const std::string& name, Index in_features, Index out_features, std::mt19937_64& rng)
    : weight(name + ".weight", he_normal<Scalar>({out_features, in_features}, in_features, rng)),
      bias(name + ".bias", Tensor<Scalar>({out_features})) {}

template <typename Scalar>
Var<Scalar> Linear<Scalar>::operator()(const Var<Scalar>& x) const {
  return ag::linear(x, weight.value, bias.value);
}

template <typename Scalar>
void Linear<Scalar>::collect(StateCollector<Scalar>& out) {
  out.parameters.push_back(&weight);
  out.parameters.push_back(&bias);
}

template <typename Scalar>
LayerSpec Linear<Scalar>::spec() const {
  const auto& s = weight.value.shape();
  return {LayerKind::Fc, Extent3::cube(1), Extent3::cube(1), Extent3::cube(0), s[1], s[0]};
}

template <typename Scalar>
BatchNorm<Scalar>::BatchNorm(const std::string& n, Index channels)
    : gamma(n + ".gamma", Tensor<Scalar>({channels}, Scalar(1))),
      beta(n + ".beta", Tensor<Scalar>({channels})),
      state(channels),
      name(n) {}

template <typename Scalar>
Var<Scalar> BatchNorm<Scalar>::operator()(const Var<Scalar>& x, bool training) {
  return ag::batch_norm(x, gamma.value, beta.value, state, training);
}

template <typename Scalar>
void BatchNorm<Scalar>::collect(StateCollector<Scalar>& out) {
  out.parameters.push_back(&gamma);
  out.parameters.push_back(&beta);
  out.buffers.push_back({name + ".running_mean", &state.running_mean});
  out.buffers.push_back({name + ".running_var", &state.running_var});
}

template Tensor<float> he_normal(Shape, Index, std::mt19937_64&);
template Tensor<double> he_normal(Shape, Index, std::mt19937_64&);
template class Conv3d<float>;
template class Conv3d<double>;
template class Deconv3d<float>;
template class Deconv3d<double>;
template class Linear<float>;
template class Linear<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;

}  // namespace ndk
