#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>

#include "lanepilot/common/error.hpp"
#include "lanepilot/nn/tensor.hpp"

namespace lanepilot::nn {

// Output size and leading zero-pad for SAME padding: out = ceil(in / stride),
// total padding split with the extra row/column at the trailing edge.
struct SamePadding {
  std::size_t out;
  std::size_t before;
};

inline SamePadding same_padding(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};
}

template <typename T>
struct BasicConvLayer {
  BasicTensor<T> kernels;  // [out_channels, in_channels, k, k]
  BasicTensor<T> bias;     // [out_channels]
  std::size_t stride = 1;

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t in_channels() const { return kernels.dim(1); }
  std::size_t kernel_size() const { return kernels.dim(2); }

  void validate() const {
    if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
      throw ShapeError("conv kernels must be [out,in,k,k], got " + shape_string(kernels.shape()));
    }
    if (kernels.dim(2) % 2 == 0) throw ShapeError("conv kernel size must be odd");
    if (stride != 1 && stride != 2) throw ShapeError("conv stride must be 1 or 2");
    if (bias.rank() != 1 || bias.dim(0) != out_channels()) {
      throw ShapeError("conv bias must have out_channels entries");
    }
  }

  Shape output_shape(const Shape& input) const {
    return {out_channels(), same_padding(input.at(1), kernel_size(), stride).out,
            same_padding(input.at(2), kernel_size(), stride).out};
  }
};

template <typename T>
struct BasicDenseLayer {
  BasicTensor<T> weights;  // [out_units, in_units]
  BasicTensor<T> bias;     // [out_units]

  std::size_t out_units() const { return weights.dim(0); }
  std::size_t in_units() const { return weights.dim(1); }

  void validate() const {
    if (weights.rank() != 2) throw ShapeError("dense weights must be [out,in]");
    if (bias.rank() != 1 || bias.dim(0) != out_units()) {
      throw ShapeError("dense bias must have out_units entries");
    }
  }
};

using ConvLayer = BasicConvLayer<float>;
using DenseLayer = BasicDenseLayer<float>;

namespace detail {

inline void check_conv_input(const Shape& input, std::size_t in_channels) {
  if (input.size() != 3) throw ShapeError("conv input must be [C,H,W], got " + shape_string(input));
  if (input[0] != in_channels) {
    throw ShapeError("conv input has " + std::to_string(input[0]) + " channels, layer expects " +
                     std::to_string(in_channels));
  }
}

// Range of output columns whose tap at kernel column kx lands inside the input.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in,
                                                       std::size_t stride, std::size_t tap,
                                                       std::size_t pad) {
  // Input index = o * stride + tap - pad must lie in [0, in).
  std::size_t lo = 0;
  if (tap < pad) lo = (pad - tap + stride - 1) / stride;
  std::size_t hi = 0;  // exclusive
  if (in + pad > tap) hi = std::min(out, (in + pad - tap - 1) / stride + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace detail

// Writes the convolution of `input` into `output` (resized if needed).
template <typename T>
void conv2d_forward_into(const BasicTensor<T>& input, const BasicConvLayer<T>& layer,
                         BasicTensor<T>& output) {
  detail::check_conv_input(input.shape(), layer.in_channels());
  const std::size_t ic_n = layer.in_channels(), oc_n = layer.out_channels();
  const std::size_t k = layer.kernel_size(), s = layer.stride;
  const std::size_t H = input.dim(1), W = input.dim(2);
  const auto [OH, pad_y] = same_padding(H, k, s);
  const auto [OW, pad_x] = same_padding(W, k, s);
  if (output.shape() != Shape{oc_n, OH, OW}) output = BasicTensor<T>({oc_n, OH, OW});

  const T* in = input.data().data();
  const T* ker = layer.kernels.data().data();
  T* out = output.data().data();
  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    T* plane = out + oc * OH * OW;
    std::fill(plane, plane + OH * OW, layer.bias[oc]);
    for (std::size_t ic = 0; ic < ic_n; ++ic) {
      const T* in_plane = in + ic * H * W;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto [oy_lo, oy_hi] = detail::valid_range(OH, H, s, ky, pad_y);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T w = ker[((oc * ic_n + ic) * k + ky) * k + kx];
          const auto [ox_lo, ox_hi] = detail::valid_range(OW, W, s, kx, pad_x);
          const std::size_t n = ox_hi - ox_lo;
          if (n == 0) continue;
          const std::size_t ix0 = ox_lo * s + kx - pad_x;
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const T* row = in_plane + (oy * s + ky - pad_y) * W + ix0;
            T* orow = plane + oy * OW + ox_lo;
            for (std::size_t j = 0; j < n; ++j) orow[j] += w * row[j * s];
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicConvLayer<T>& layer) {
  layer.validate();
  BasicTensor<T> out;
  conv2d_forward_into(input, layer, out);
  return out;
}

template <typename T>
struct ConvGradients {
  BasicTensor<T> input;    // empty when not requested
  BasicTensor<T> kernels;
  BasicTensor<T> bias;
};

// Accumulates parameter gradients into grad_kernels/grad_bias (+=) and, when
// grad_input is non-null, writes the input gradient (overwrites).
template <typename T>
void conv2d_backward_accumulate(const BasicTensor<T>& input, const BasicConvLayer<T>& layer,
                                const BasicTensor<T>& grad_out, BasicTensor<T>& grad_kernels,
                                BasicTensor<T>& grad_bias, BasicTensor<T>* grad_input) {
  detail::check_conv_input(input.shape(), layer.in_channels());
  const std::size_t ic_n = layer.in_channels(), oc_n = layer.out_channels();
  const std::size_t k = layer.kernel_size(), s = layer.stride;
  const std::size_t H = input.dim(1), W = input.dim(2);
  const auto [OH, pad_y] = same_padding(H, k, s);
  const auto [OW, pad_x] = same_padding(W, k, s);
  if (grad_out.shape() != Shape{oc_n, OH, OW}) {
    throw ShapeError("conv grad_out shape " + shape_string(grad_out.shape()) + " does not match " +
                     shape_string(Shape{oc_n, OH, OW}));
  }
  if (grad_kernels.shape() != layer.kernels.shape() || grad_bias.shape() != layer.bias.shape()) {
    throw ShapeError("conv gradient buffers do not match parameter shapes");
  }
  if (grad_input) {
    if (grad_input->shape() != input.shape()) *grad_input = BasicTensor<T>(input.shape());
    grad_input->fill(T{0});
  }

  const T* in = input.data().data();
  const T* ker = layer.kernels.data().data();
  const T* go = grad_out.data().data();
  T* gk = grad_kernels.data().data();
  T* gi = grad_input ? grad_input->data().data() : nullptr;

  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    const T* gplane = go + oc * OH * OW;
    T acc{0};
    for (std::size_t i = 0; i < OH * OW; ++i) acc += gplane[i];
    grad_bias[oc] += acc;
    for (std::size_t ic = 0; ic < ic_n; ++ic) {
      const T* in_plane = in + ic * H * W;
      T* gi_plane = gi ? gi + ic * H * W : nullptr;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto [oy_lo, oy_hi] = detail::valid_range(OH, H, s, ky, pad_y);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t widx = ((oc * ic_n + ic) * k + ky) * k + kx;
          const T w = ker[widx];
          const auto [ox_lo, ox_hi] = detail::valid_range(OW, W, s, kx, pad_x);
          const std::size_t n = ox_hi - ox_lo;
          if (n == 0) continue;
          const std::size_t ix0 = ox_lo * s + kx - pad_x;
          T gw{0};
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const std::size_t in_off = (oy * s + ky - pad_y) * W + ix0;
            const T* row = in_plane + in_off;
            const T* grow = gplane + oy * OW + ox_lo;
            for (std::size_t j = 0; j < n; ++j) gw += grow[j] * row[j * s];
            if (gi_plane) {
              T* girow = gi_plane + in_off;
              for (std::size_t j = 0; j < n; ++j) girow[j * s] += w * grow[j];
            }
          }
          gk[widx] += gw;
        }
      }
    }
  }
}

template <typename T>
ConvGradients<T> conv2d_backward(const BasicTensor<T>& input, const BasicConvLayer<T>& layer,
                                 const BasicTensor<T>& grad_out) {
  layer.validate();
  ConvGradients<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(layer.kernels.shape()),
                     BasicTensor<T>(layer.bias.shape())};
  conv2d_backward_accumulate(input, layer, grad_out, g.kernels, g.bias, &g.input);
  return g;
}

// ReLU. The tie at exactly zero is treated as inactive in both directions.
template <typename T>
void relu_inplace(BasicTensor<T>& x) {
  for (T& v : x.data()) v = v > T{0} ? v : T{0};
}

template <typename T>
BasicTensor<T> relu(BasicTensor<T> x) {
  relu_inplace(x);
  return x;
}

// grad *= 1[activation > 0]; `activation` may be either the pre- or
// post-ReLU value since both are positive on the same set.
template <typename T>
void relu_backward_inplace(const BasicTensor<T>& activation, BasicTensor<T>& grad) {
  if (activation.size() != grad.size()) throw ShapeError("relu_backward: size mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activation[i] > T{0})) grad[i] = T{0};
  }
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, BasicTensor<T> grad_out) {
  relu_backward_inplace(input, grad_out);
  return grad_out;
}

template <typename T>
void dense_forward_into(const BasicTensor<T>& input, const BasicDenseLayer<T>& layer,
                        BasicTensor<T>& output) {
  const std::size_t n_in = layer.in_units(), n_out = layer.out_units();
  if (input.size() != n_in) {
    throw ShapeError("dense input length " + std::to_string(input.size()) + " != in_units " +
                     std::to_string(n_in));
  }
  if (output.shape() != Shape{n_out}) output = BasicTensor<T>({n_out});
  const T* x = input.data().data();
  const T* w = layer.weights.data().data();
  for (std::size_t o = 0; o < n_out; ++o) {
    const T* row = w + o * n_in;
    T acc{0};
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * x[i];
    output[o] = acc + layer.bias[o];
  }
}

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input, const BasicDenseLayer<T>& layer) {
  layer.validate();
  BasicTensor<T> out;
  dense_forward_into(input, layer, out);
  return out;
}

template <typename T>
struct DenseGradients {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

// grad_W += grad_out (outer) input, grad_b += grad_out, grad_in = W^T grad_out.
template <typename T>
void dense_backward_accumulate(const BasicTensor<T>& input, const BasicDenseLayer<T>& layer,
                               const BasicTensor<T>& grad_out, BasicTensor<T>& grad_weights,
                               BasicTensor<T>& grad_bias, BasicTensor<T>* grad_input) {
  const std::size_t n_in = layer.in_units(), n_out = layer.out_units();
  if (input.size() != n_in || grad_out.size() != n_out) {
    throw ShapeError("dense_backward: input/grad_out length mismatch");
  }
  if (grad_weights.shape() != layer.weights.shape() || grad_bias.shape() != layer.bias.shape()) {
    throw ShapeError("dense gradient buffers do not match parameter shapes");
  }
  const T* x = input.data().data();
  const T* w = layer.weights.data().data();
  T* gw = grad_weights.data().data();
  for (std::size_t o = 0; o < n_out; ++o) {
    const T g = grad_out[o];
    grad_bias[o] += g;
    T* grow = gw + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) grow[i] += g * x[i];
  }
  if (grad_input) {
    if (grad_input->shape() != input.shape()) *grad_input = BasicTensor<T>(input.shape());
    grad_input->fill(T{0});
    T* gi = grad_input->data().data();
    for (std::size_t o = 0; o < n_out; ++o) {
      const T g = grad_out[o];
      const T* row = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) gi[i] += row[i] * g;
    }
  }
}

template <typename T>
DenseGradients<T> dense_backward(const BasicTensor<T>& input, const BasicDenseLayer<T>& layer,
                                 const BasicTensor<T>& grad_out) {
  layer.validate();
  DenseGradients<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(layer.weights.shape()),
                      BasicTensor<T>(layer.bias.shape())};
  dense_backward_accumulate(input, layer, grad_out, g.weights, g.bias, &g.input);
  return g;
}

template <typename T>
struct MseResult {
  T loss;
  BasicTensor<T> grad;
};

// loss = mean((p - t)^2), grad = 2 (p - t) / N.
template <typename T>
MseResult<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.size() != target.size()) {
    throw ShapeError("mse_loss: prediction length " + std::to_string(pred.size()) +
                     " != target length " + std::to_string(target.size()));
  }
  if (pred.empty()) throw ShapeError("mse_loss: empty input");
  const T n = static_cast<T>(pred.size());
  MseResult<T> r{T{0}, BasicTensor<T>(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    r.loss += d * d;
    r.grad[i] = T{2} * d / n;
  }
  r.loss /= n;
  return r;
}

}  // namespace lanepilot::nn
