#include "ndk/kernels.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace ndk {

std::string to_string(const Extent3& e) {
  return std::to_string(e.d) + "x" + std::to_string(e.h) + "x" + std::to_string(e.w);
}

namespace {

Index conv_axis(const char* axis, Index in, Index k, Index s, Index p) {
  if (k < 1) throw std::invalid_argument(std::string("kernel extent along ") + axis + " must be >= 1");
  if (s < 1) throw std::invalid_argument(std::string("stride along ") + axis + " must be >= 1");
  if (p < 0) throw std::invalid_argument(std::string("padding along ") + axis + " must be >= 0");
  if (in + 2 * p < k) {
    throw std::invalid_argument(std::string("kernel extent ") + std::to_string(k) + " exceeds padded input extent " +
                                std::to_string(in + 2 * p) + " along " + axis);
  }
  return (in + 2 * p - k) / s + 1;
}

void require_rank5(const Shape& s, const char* what) {
  if (s.size() != 5) throw std::invalid_argument(std::string(what) + " must be rank 5 (NCDHW), got " + shape_str(s));
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using StridedMap = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using ConstStridedMap = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;

// Geometry shared by the im2col based convolution routines.
struct ConvPlan {
  Index n, cin, cout;
  Extent3 in, k, out;
  ConvParams p;
  Index rows() const { return cin * k.volume(); }
  Index out_plane() const { return out.h * out.w; }
  Index out_spatial() const { return out.d * out_plane(); }
  Index in_spatial() const { return in.volume(); }
  bool pointwise() const {
    return k == Extent3::cube(1) && p.stride == Extent3::cube(1) && p.padding == Extent3::cube(0);
  }
  Index chunk_depth() const {
    constexpr Index kBudget = Index{1} << 21;
    const Index per_plane = std::max<Index>(1, rows() * out_plane());
    return std::clamp<Index>(kBudget / per_plane, 1, out.d);
  }
};

ConvPlan make_plan(const Shape& input, const Shape& weight, const ConvParams& params) {
  require_rank5(input, "conv input");
  require_rank5(weight, "conv weight");
  if (input[1] != weight[1]) {
    throw std::invalid_argument("conv channel mismatch: input has " + std::to_string(input[1]) +
                                " channels, weight expects " + std::to_string(weight[1]));
  }
  ConvPlan plan;
  plan.n = input[0];
  plan.cin = input[1];
  plan.cout = weight[0];
  plan.in = {input[2], input[3], input[4]};
  plan.k = {weight[2], weight[3], weight[4]};
  plan.p = params;
  plan.out = conv_output_extent(plan.in, plan.k, params);
  return plan;
}

// cols[r, (z - z0) * plane + y * OW + x] = input[c, z*s + i - p, ...] for r = (c, i, j, k).
template <typename Scalar>
void im2col(const Scalar* in, const ConvPlan& pl, Index z0, Index nz, Scalar* cols) {
  const Index plane = pl.out_plane();
  const Index width = nz * plane;
  Index r = 0;
  for (Index c = 0; c < pl.cin; ++c) {
    const Scalar* in_c = in + c * pl.in_spatial();
    for (Index i = 0; i < pl.k.d; ++i) {
      for (Index j = 0; j < pl.k.h; ++j) {
        for (Index k = 0; k < pl.k.w; ++k, ++r) {
          Scalar* row = cols + r * width;
          for (Index oz = 0; oz < nz; ++oz) {
            const Index iz = (z0 + oz) * pl.p.stride.d + i - pl.p.padding.d;
            Scalar* dst_z = row + oz * plane;
            if (iz < 0 || iz >= pl.in.d) {
              std::fill(dst_z, dst_z + plane, Scalar(0));
              continue;
            }
            for (Index oy = 0; oy < pl.out.h; ++oy) {
              const Index iy = oy * pl.p.stride.h + j - pl.p.padding.h;
              Scalar* dst = dst_z + oy * pl.out.w;
              if (iy < 0 || iy >= pl.in.h) {
                std::fill(dst, dst + pl.out.w, Scalar(0));
                continue;
              }
              const Scalar* src = in_c + (iz * pl.in.h + iy) * pl.in.w;
              for (Index ox = 0; ox < pl.out.w; ++ox) {
                const Index ix = ox * pl.p.stride.w + k - pl.p.padding.w;
                dst[ox] = (ix >= 0 && ix < pl.in.w) ? src[ix] : Scalar(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* cols, const ConvPlan& pl, Index z0, Index nz, Scalar* grad_in) {
  const Index plane = pl.out_plane();
  const Index width = nz * plane;
  Index r = 0;
  for (Index c = 0; c < pl.cin; ++c) {
    Scalar* g_c = grad_in + c * pl.in_spatial();
    for (Index i = 0; i < pl.k.d; ++i) {
      for (Index j = 0; j < pl.k.h; ++j) {
        for (Index k = 0; k < pl.k.w; ++k, ++r) {
          const Scalar* row = cols + r * width;
          for (Index oz = 0; oz < nz; ++oz) {
            const Index iz = (z0 + oz) * pl.p.stride.d + i - pl.p.padding.d;
            if (iz < 0 || iz >= pl.in.d) continue;
            for (Index oy = 0; oy < pl.out.h; ++oy) {
              const Index iy = oy * pl.p.stride.h + j - pl.p.padding.h;
              if (iy < 0 || iy >= pl.in.h) continue;
              const Scalar* src = row + oz * plane + oy * pl.out.w;
              Scalar* dst = g_c + (iz * pl.in.h + iy) * pl.in.w;
              for (Index ox = 0; ox < pl.out.w; ++ox) {
                const Index ix = ox * pl.p.stride.w + k - pl.p.padding.w;
                if (ix >= 0 && ix < pl.in.w) dst[ix] += src[ox];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Extent3 conv_output_extent(const Extent3& input, const Extent3& kernel, const ConvParams& params) {
  return {conv_axis("depth", input.d, kernel.d, params.stride.d, params.padding.d),
          conv_axis("height", input.h, kernel.h, params.stride.h, params.padding.h),
          conv_axis("width", input.w, kernel.w, params.stride.w, params.padding.w)};
}

Extent3 deconv_output_extent(const Extent3& input, const Extent3& kernel, const ConvParams& params) {
  auto axis = [](const char* name, Index in, Index k, Index s, Index p) {
    if (k < 1) throw std::invalid_argument(std::string("kernel extent along ") + name + " must be >= 1");
    if (s < 1) throw std::invalid_argument(std::string("stride along ") + name + " must be >= 1");
    const Index out = (in - 1) * s + k - 2 * p;
    if (out < 1) throw std::invalid_argument(std::string("transposed conv output is empty along ") + name);
    return out;
  };
  return {axis("depth", input.d, kernel.d, params.stride.d, params.padding.d),
          axis("height", input.h, kernel.h, params.stride.h, params.padding.h),
          axis("width", input.w, kernel.w, params.stride.w, params.padding.w)};
}

Extent3 spatial_extent(const Shape& s) {
  require_rank5(s, "tensor");
  return {s[2], s[3], s[4]};
}

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                      const ConvParams& params) {
  const ConvPlan pl = make_plan(input.shape(), weight.shape(), params);
  if (bias && bias->numel() != pl.cout) throw std::invalid_argument("conv bias size does not match output channels");
  Tensor<Scalar> out({pl.n, pl.cout, pl.out.d, pl.out.h, pl.out.w});
  const auto w = weight.matrix(pl.cout, pl.rows());
  const Index ospatial = pl.out_spatial();

  for (Index n = 0; n < pl.n; ++n) {
    const Scalar* in_n = input.data() + n * pl.cin * pl.in_spatial();
    Scalar* out_n = out.data() + n * pl.cout * ospatial;
    if (pl.pointwise()) {
      Eigen::Map<const RowMatrix<Scalar>> x(in_n, pl.cin, ospatial);
      Eigen::Map<RowMatrix<Scalar>>(out_n, pl.cout, ospatial).noalias() = w * x;
    } else {
      const Index chunk = pl.chunk_depth();
      std::vector<Scalar> cols(static_cast<std::size_t>(pl.rows() * chunk * pl.out_plane()));
      for (Index z0 = 0; z0 < pl.out.d; z0 += chunk) {
        const Index nz = std::min(chunk, pl.out.d - z0);
        const Index width = nz * pl.out_plane();
        im2col(in_n, pl, z0, nz, cols.data());
        Eigen::Map<const RowMatrix<Scalar>> c(cols.data(), pl.rows(), width);
        StridedMap<Scalar> o(out_n + z0 * pl.out_plane(), pl.cout, width, Eigen::OuterStride<>(ospatial));
        o.noalias() = w * c;
      }
    }
    if (bias) {
      for (Index o = 0; o < pl.cout; ++o) {
        Scalar* row = out_n + o * ospatial;
        const Scalar b = (*bias)[o];
        for (Index i = 0; i < ospatial; ++i) row[i] += b;
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv3d_grad_input(const Tensor<Scalar>& grad_output, const Tensor<Scalar>& weight,
                                 const Shape& input_shape, const ConvParams& params) {
  const ConvPlan pl = make_plan(input_shape, weight.shape(), params);
  const Shape expected{pl.n, pl.cout, pl.out.d, pl.out.h, pl.out.w};
  if (grad_output.shape() != expected) {
    throw std::invalid_argument("conv gradient shape " + shape_str(grad_output.shape()) + " does not match output " +
                                shape_str(expected));
  }
  Tensor<Scalar> grad_in(input_shape);
  const auto w = weight.matrix(pl.cout, pl.rows());
  const Index ospatial = pl.out_spatial();

  for (Index n = 0; n < pl.n; ++n) {
    const Scalar* go_n = grad_output.data() + n * pl.cout * ospatial;
    Scalar* gi_n = grad_in.data() + n * pl.cin * pl.in_spatial();
    if (pl.pointwise()) {
      Eigen::Map<const RowMatrix<Scalar>> go(go_n, pl.cout, ospatial);
      Eigen::Map<RowMatrix<Scalar>>(gi_n, pl.cin, ospatial).noalias() = w.transpose() * go;
      continue;
    }
    const Index chunk = pl.chunk_depth();
    std::vector<Scalar> cols(static_cast<std::size_t>(pl.rows() * chunk * pl.out_plane()));
    for (Index z0 = 0; z0 < pl.out.d; z0 += chunk) {
      const Index nz = std::min(chunk, pl.out.d - z0);
      const Index width = nz * pl.out_plane();
      ConstStridedMap<Scalar> go(go_n + z0 * pl.out_plane(), pl.cout, width, Eigen::OuterStride<>(ospatial));
      Eigen::Map<RowMatrix<Scalar>> c(cols.data(), pl.rows(), width);
      c.noalias() = w.transpose() * go;
      col2im_add(cols.data(), pl, z0, nz, gi_n);
    }
  }
  return grad_in;
}

template <typename Scalar>
void conv3d_grad_weight(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_output, const ConvParams& params,
                        Tensor<Scalar>& grad_weight, NoDeduce<Tensor<Scalar>>* grad_bias) {
  const ConvPlan pl = make_plan(input.shape(), grad_weight.shape(), params);
  auto gw = grad_weight.matrix(pl.cout, pl.rows());
  const Index ospatial = pl.out_spatial();

  for (Index n = 0; n < pl.n; ++n) {
    const Scalar* in_n = input.data() + n * pl.cin * pl.in_spatial();
    const Scalar* go_n = grad_output.data() + n * pl.cout * ospatial;
    if (pl.pointwise()) {
      Eigen::Map<const RowMatrix<Scalar>> x(in_n, pl.cin, ospatial);
      Eigen::Map<const RowMatrix<Scalar>> go(go_n, pl.cout, ospatial);
      gw.noalias() += go * x.transpose();
    } else {
      const Index chunk = pl.chunk_depth();
      std::vector<Scalar> cols(static_cast<std::size_t>(pl.rows() * chunk * pl.out_plane()));
      for (Index z0 = 0; z0 < pl.out.d; z0 += chunk) {
        const Index nz = std::min(chunk, pl.out.d - z0);
        const Index width = nz * pl.out_plane();
        im2col(in_n, pl, z0, nz, cols.data());
        Eigen::Map<const RowMatrix<Scalar>> c(cols.data(), pl.rows(), width);
        ConstStridedMap<Scalar> go(go_n + z0 * pl.out_plane(), pl.cout, width, Eigen::OuterStride<>(ospatial));
        gw.noalias() += go * c.transpose();
      }
    }
    if (grad_bias) {
      for (Index o = 0; o < pl.cout; ++o) {
        Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> row(go_n + o * ospatial, ospatial);
        (*grad_bias)[o] += row.sum();
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> deconv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                        const ConvParams& params) {
  require_rank5(input.shape(), "deconv input");
  require_rank5(weight.shape(), "deconv weight");
  if (input.dim(1) != weight.dim(0)) {
    throw std::invalid_argument("deconv channel mismatch: input has " + std::to_string(input.dim(1)) +
                                " channels, weight expects " + std::to_string(weight.dim(0)));
  }
  const Extent3 k{weight.dim(2), weight.dim(3), weight.dim(4)};
  const Extent3 out = deconv_output_extent(spatial_extent(input.shape()), k, params);
  const Index cout = weight.dim(1);
  Tensor<Scalar> result = conv3d_grad_input(input, weight, {input.dim(0), cout, out.d, out.h, out.w}, params);
  if (bias) {
    if (bias->numel() != cout) throw std::invalid_argument("deconv bias size does not match output channels");
    const Index spatial = out.volume();
    for (Index n = 0; n < input.dim(0); ++n) {
      for (Index c = 0; c < cout; ++c) {
        Scalar* row = result.data() + (n * cout + c) * spatial;
        for (Index i = 0; i < spatial; ++i) row[i] += (*bias)[c];
      }
    }
  }
  return result;
}

template <typename Scalar>
PoolResult<Scalar> maxpool3d(const Tensor<Scalar>& input, const Extent3& kernel, const Extent3& stride) {
  require_rank5(input.shape(), "maxpool input");
  const Extent3 in = spatial_extent(input.shape());
  const Extent3 out = conv_output_extent(in, kernel, ConvParams{stride, Extent3::cube(0)});
  const Index nc = input.dim(0) * input.dim(1);
  PoolResult<Scalar> r{Tensor<Scalar>({input.dim(0), input.dim(1), out.d, out.h, out.w}), {}};
  r.argmax.resize(static_cast<std::size_t>(r.output.numel()));
  Index o = 0;
  for (Index c = 0; c < nc; ++c) {
    const Index base = c * in.volume();
    for (Index z = 0; z < out.d; ++z) {
      for (Index y = 0; y < out.h; ++y) {
        for (Index x = 0; x < out.w; ++x, ++o) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index best_at = -1;
          for (Index i = 0; i < kernel.d; ++i) {
            for (Index j = 0; j < kernel.h; ++j) {
              const Index row = base + ((z * stride.d + i) * in.h + (y * stride.h + j)) * in.w + x * stride.w;
              for (Index k = 0; k < kernel.w; ++k) {
                const Scalar v = input[row + k];
                if (best_at < 0 || v > best) {
                  best = v;
                  best_at = row + k;
                }
              }
            }
          }
          r.output[o] = best;
          r.argmax[static_cast<std::size_t>(o)] = best_at;
        }
      }
    }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool3d_backward(const Tensor<Scalar>& grad_output, const std::vector<Index>& argmax,
                                  const Shape& input_shape) {
  if (static_cast<Index>(argmax.size()) != grad_output.numel()) {
    throw std::invalid_argument("maxpool backward: argmax size mismatch");
  }
  Tensor<Scalar> grad(input_shape);
  for (Index i = 0; i < grad_output.numel(); ++i) grad[argmax[static_cast<std::size_t>(i)]] += grad_output[i];
  return grad;
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias) {
  if (input.rank() != 2 || weight.rank() != 2) throw std::invalid_argument("linear expects rank-2 input and weight");
  if (input.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("linear feature mismatch: input has " + std::to_string(input.dim(1)) +
                                " features, weight expects " + std::to_string(weight.dim(1)));
  }
  const Index n = input.dim(0), in = input.dim(1), out_f = weight.dim(0);
  Tensor<Scalar> out({n, out_f});
  out.matrix(n, out_f).noalias() = input.matrix(n, in) * weight.matrix(out_f, in).transpose();
  if (bias) {
    if (bias->numel() != out_f) throw std::invalid_argument("linear bias size mismatch");
    for (Index r = 0; r < n; ++r) {
      for (Index c = 0; c < out_f; ++c) out[r * out_f + c] += (*bias)[c];
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  Tensor<Scalar> out = input;
  out.array() = out.array().max(Scalar(0));
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax expects [N, K] logits");
  const Index n = logits.dim(0), k = logits.dim(1);
  Tensor<Scalar> out = logits;
  for (Index r = 0; r < n; ++r) {
    Scalar* row = out.data() + r * k;
    const Scalar m = *std::max_element(row, row + k);
    Scalar total = 0;
    for (Index c = 0; c < k; ++c) {
      row[c] = std::exp(row[c] - m);
      total += row[c];
    }
    for (Index c = 0; c < k; ++c) row[c] /= total;
  }
  return out;
}

#define NDK_INSTANTIATE_KERNELS(S)                                                                                \
  template Tensor<S> conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>*, const ConvParams&);            \
  template Tensor<S> conv3d_grad_input(const Tensor<S>&, const Tensor<S>&, const Shape&, const ConvParams&);    \
  template void conv3d_grad_weight(const Tensor<S>&, const Tensor<S>&, const ConvParams&, Tensor<S>&,           \
                                   Tensor<S>*);                                                                  \
  template Tensor<S> deconv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>*, const ConvParams&);          \
  template PoolResult<S> maxpool3d(const Tensor<S>&, const Extent3&, const Extent3&);                           \
  template Tensor<S> maxpool3d_backward(const Tensor<S>&, const std::vector<Index>&, const Shape&);              \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>*);                               \
  template Tensor<S> relu(const Tensor<S>&);                                                                     \
  template Tensor<S> softmax(const Tensor<S>&);

NDK_INSTANTIATE_KERNELS(float)
NDK_INSTANTIATE_KERNELS(double)

}  // namespace ndk
