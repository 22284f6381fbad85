#pragma once

#include "ndk/autograd.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ndk {

/// A trainable tensor with its optimizer state. The gradient lives on `value`.
template <typename Scalar>
struct Parameter {
  std::string name;
  Var<Scalar> value;
  Tensor<Scalar> momentum;

  Parameter() = default;
  Parameter(std::string n, Tensor<Scalar> init)
      : name(std::move(n)), value(std::move(init), true), momentum(Tensor<Scalar>::zeros_like(value.value())) {}
};

template <typename Scalar>
struct NamedBuffer {
  std::string name;
  Tensor<Scalar>* tensor;
};

template <typename Scalar>
struct StateCollector {
  std::vector<Parameter<Scalar>*> parameters;
  std::vector<NamedBuffer<Scalar>> buffers;
};

/// Base for anything that owns parameters or running statistics.
template <typename Scalar>
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(StateCollector<Scalar>& out) = 0;

  std::vector<Parameter<Scalar>*> parameters() {
    StateCollector<Scalar> c;
    collect(c);
    return c.parameters;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->value.zero_grad();
  }
};

enum class LayerKind { Conv3d, Deconv3d, MaxPool3d, Fc, Relu, BatchNorm, Softmax };

const char* to_string(LayerKind kind);

/// Static description of one layer, enough to infer its output shape before allocating anything.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  Extent3 kernel = Extent3::cube(1);
  Extent3 stride = Extent3::cube(1);
  Extent3 padding = Extent3::cube(0);
  Index in_channels = 0;
  Index out_channels = 0;
};

Shape infer_output_shape(const LayerSpec& spec, const Shape& input);

/// Runs infer_output_shape through a chain of layers.
Shape infer_output_shape(const std::vector<LayerSpec>& chain, Shape input);

/// He-normal initialization with fan_in taken from all but the leading axis.
template <typename Scalar>
Tensor<Scalar> he_normal(Shape shape, Index fan_in, std::mt19937_64& rng);

template <typename Scalar>
class Conv3d : public Module<Scalar> {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, Index in_channels, Index out_channels, Extent3 kernel, ConvParams params,
         std::mt19937_64& rng, bool bias = true);

  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(StateCollector<Scalar>& out) override;
  LayerSpec spec() const;

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;  // undefined value when the layer has no bias
  ConvParams params;
};

template <typename Scalar>
class Deconv3d : public Module<Scalar> {
 public:
  Deconv3d() = default;
  Deconv3d(const std::string& name, Index in_channels, Index out_channels, Extent3 kernel, ConvParams params,
           std::mt19937_64& rng, bool bias = true);

  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(StateCollector<Scalar>& out) override;
  LayerSpec spec() const;

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
  ConvParams params;
};

template <typename Scalar>
class Linear : public Module<Scalar> {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in_features, Index out_features, std::mt19937_64& rng);

  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(StateCollector<Scalar>& out) override;
  LayerSpec spec() const;

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
};

template <typename Scalar>
class BatchNorm : public Module<Scalar> {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, Index channels);

  Var<Scalar> operator()(const Var<Scalar>& x, bool training);
  void collect(StateCollector<Scalar>& out) override;

  Parameter<Scalar> gamma;
  Parameter<Scalar> beta;
  BatchNormState<Scalar> state;
  std::string name;
};

}  // namespace ndk
