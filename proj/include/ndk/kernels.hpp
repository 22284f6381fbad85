#pragma once

#include "ndk/tensor.hpp"

#include <string>
#include <vector>
#include <type_traits>

namespace ndk {

/// Keeps optional pointer arguments out of template deduction so `nullptr` can be passed.
template <typename T>
using NoDeduce = std::type_identity_t<T>;

/// Per-axis extents in depth/height/width order.
struct Extent3 {
  Index d = 1;
  Index h = 1;
  Index w = 1;

  static constexpr Extent3 cube(Index k) { return {k, k, k}; }
  Index volume() const { return d * h * w; }
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

std::string to_string(const Extent3& e);

struct ConvParams {
  Extent3 stride = Extent3::cube(1);
  Extent3 padding = Extent3::cube(0);
};

/// floor((in + 2p - k) / s) + 1 per axis; throws naming the axis when the window does not fit.
Extent3 conv_output_extent(const Extent3& input, const Extent3& kernel, const ConvParams& params);

/// (in - 1) * s + k - 2p per axis.
Extent3 deconv_output_extent(const Extent3& input, const Extent3& kernel, const ConvParams& params);

Extent3 spatial_extent(const Shape& ncdhw);

// Convolution is cross-correlation: out[n,o,z,y,x] = sum w[o,c,i,j,k] * in[n,c,z*s+i-p, ...].
// Weight layout [Cout, Cin, kd, kh, kw].
template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                      const ConvParams& params);

/// Gradient of conv3d with respect to its input; this is also the transposed convolution.
template <typename Scalar>
Tensor<Scalar> conv3d_grad_input(const Tensor<Scalar>& grad_output, const Tensor<Scalar>& weight,
                                 const Shape& input_shape, const ConvParams& params);

/// Accumulates weight (and optionally bias) gradients.
template <typename Scalar>
void conv3d_grad_weight(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_output, const ConvParams& params,
                        Tensor<Scalar>& grad_weight, NoDeduce<Tensor<Scalar>>* grad_bias);

// Transposed convolution. Weight layout [Cin, Cout, kd, kh, kw], i.e. the same tensor as the
// conv3d weight that maps Cout -> Cin; deconv3d is its adjoint.
template <typename Scalar>
Tensor<Scalar> deconv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                        const ConvParams& params);

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> output;
  std::vector<Index> argmax;  // flat input offset of the winning voxel per output element
};

template <typename Scalar>
PoolResult<Scalar> maxpool3d(const Tensor<Scalar>& input, const Extent3& kernel, const Extent3& stride);

template <typename Scalar>
Tensor<Scalar> maxpool3d_backward(const Tensor<Scalar>& grad_output, const std::vector<Index>& argmax,
                                  const Shape& input_shape);

/// x [N, in], weight [out, in], bias [out] -> [N, out].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

/// Row-wise softmax over the last axis of a rank-2 tensor.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

}  // namespace ndk
