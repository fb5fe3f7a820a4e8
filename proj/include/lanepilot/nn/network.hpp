#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lanepilot/common/error.hpp"
#include "lanepilot/common/rng.hpp"
#include "lanepilot/nn/layers.hpp"
#include "lanepilot/nn/tensor.hpp"

namespace lanepilot::nn {

inline constexpr std::size_t kConvLayers = 4;
inline constexpr std::size_t kDenseLayers = 2;
inline constexpr float kInitialBias = 0.1f;
inline constexpr float kInitialWeightRange = 0.1f;

// Kernel size and stride of the four convolution stages.
inline constexpr std::array<std::size_t, kConvLayers> kConvKernel{5, 5, 5, 3};
inline constexpr std::array<std::size_t, kConvLayers> kConvStride{2, 2, 2, 1};

struct NetConfig {
  std::string profile = "full";
  std::size_t input_height = 66;
  std::size_t input_width = 200;
  std::size_t input_channels = 1;
  std::array<std::size_t, kConvLayers> conv_channels{24, 36, 48, 64};
  std::size_t hidden_units = 100;
  std::uint64_t seed = 1;

  static NetConfig full(std::uint64_t seed = 1) {
    NetConfig c;
    c.seed = seed;
    return c;
  }

  static NetConfig tiny(std::uint64_t seed = 1) {
    NetConfig c;
    c.profile = "tiny";
    c.input_height = 32;
    c.input_width = 64;
    c.conv_channels = {8, 12, 16, 16};
    c.hidden_units = 32;
    c.seed = seed;
    return c;
  }

  static NetConfig from_profile(const std::string& name, std::uint64_t seed = 1) {
    if (name == "full") return full(seed);
    if (name == "tiny") return tiny(seed);
    throw ConfigError("unknown network profile '" + name + "' (expected full or tiny)");
  }

  Shape input_shape() const { return {input_channels, input_height, input_width}; }

  void validate() const {
    if (input_height == 0 || input_width == 0 || input_channels == 0 || hidden_units == 0) {
      throw ConfigError("network dimensions must be positive");
    }
    for (auto c : conv_channels) {
      if (c == 0) throw ConfigError("conv channel widths must be positive");
    }
  }

  // [C,H,W] after each convolution stage.
  std::array<Shape, kConvLayers> conv_output_shapes() const {
    std::array<Shape, kConvLayers> out;
    std::size_t h = input_height, w = input_width;
    for (std::size_t i = 0; i < kConvLayers; ++i) {
      h = same_padding(h, kConvKernel[i], kConvStride[i]).out;
      w = same_padding(w, kConvKernel[i], kConvStride[i]).out;
      out[i] = {conv_channels[i], h, w};
    }
    return out;
  }

  std::size_t flattened_units() const { return shape_volume(conv_output_shapes().back()); }
};

// Four SAME-padded conv layers and two dense layers; ReLU after every layer
// but the last, whose single linear output is the steering angle in radians.
struct Network {
  NetConfig config;
  std::array<ConvLayer, kConvLayers> convs;
  std::array<DenseLayer, kDenseLayers> dense;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& c : convs) n += c.kernels.size() + c.bias.size();
    for (const auto& d : dense) n += d.weights.size() + d.bias.size();
    return n;
  }

  // Parameter tensors in serialization order: kernels, bias per layer.
  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> p;
    for (const auto& c : convs) {
      p.push_back(&c.kernels);
      p.push_back(&c.bias);
    }
    for (const auto& d : dense) {
      p.push_back(&d.weights);
      p.push_back(&d.bias);
    }
    return p;
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> p;
    for (auto& c : convs) {
      p.push_back(&c.kernels);
      p.push_back(&c.bias);
    }
    for (auto& d : dense) {
      p.push_back(&d.weights);
      p.push_back(&d.bias);
    }
    return p;
  }

  friend bool operator==(const Network& a, const Network& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (!(*pa[i] == *pb[i])) return false;
    }
    return true;
  }
};

// Expected parameter shapes for a config, in serialization order.
inline std::vector<Shape> expected_parameter_shapes(const NetConfig& cfg) {
  std::vector<Shape> shapes;
  std::size_t in_c = cfg.input_channels;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    shapes.push_back({cfg.conv_channels[i], in_c, kConvKernel[i], kConvKernel[i]});
    shapes.push_back({cfg.conv_channels[i]});
    in_c = cfg.conv_channels[i];
  }
  shapes.push_back({cfg.hidden_units, cfg.flattened_units()});
  shapes.push_back({cfg.hidden_units});
  shapes.push_back({1, cfg.hidden_units});
  shapes.push_back({1});
  return shapes;
}

// Biases are 0.1; weights i.i.d. uniform on [-0.1, 0.1] drawn in layer order
// from a generator seeded by cfg.seed.
inline Network init_network(const NetConfig& cfg) {
  cfg.validate();
  Network net;
  net.config = cfg;
  const auto shapes = expected_parameter_shapes(cfg);
  Rng rng(cfg.seed);
  auto draw = [&](const Shape& s) {
    Tensor t(s);
    for (float& v : t.data()) v = rng.uniform_float(-kInitialWeightRange, kInitialWeightRange);
    return t;
  };
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    net.convs[i].kernels = draw(shapes[2 * i]);
    net.convs[i].bias = Tensor(shapes[2 * i + 1], kInitialBias);
    net.convs[i].stride = kConvStride[i];
  }
  for (std::size_t i = 0; i < kDenseLayers; ++i) {
    net.dense[i].weights = draw(shapes[2 * (kConvLayers + i)]);
    net.dense[i].bias = Tensor(shapes[2 * (kConvLayers + i) + 1], kInitialBias);
  }
  return net;
}

// Activations kept from the forward pass for backpropagation.
struct ForwardCache {
  std::array<Tensor, kConvLayers> conv;  // post-ReLU
  Tensor hidden;                         // post-ReLU
  Tensor output;                         // [1]
};

struct NetworkGradients {
  std::array<Tensor, kConvLayers> conv_kernels;
  std::array<Tensor, kConvLayers> conv_bias;
  std::array<Tensor, kDenseLayers> dense_weights;
  std::array<Tensor, kDenseLayers> dense_bias;

  explicit NetworkGradients(const Network& net) {
    for (std::size_t i = 0; i < kConvLayers; ++i) {
      conv_kernels[i] = Tensor(net.convs[i].kernels.shape());
      conv_bias[i] = Tensor(net.convs[i].bias.shape());
    }
    for (std::size_t i = 0; i < kDenseLayers; ++i) {
      dense_weights[i] = Tensor(net.dense[i].weights.shape());
      dense_bias[i] = Tensor(net.dense[i].bias.shape());
    }
  }

  void zero() {
    for (auto& t : conv_kernels) t.fill(0.0f);
    for (auto& t : conv_bias) t.fill(0.0f);
    for (auto& t : dense_weights) t.fill(0.0f);
    for (auto& t : dense_bias) t.fill(0.0f);
  }
};

// Scratch buffers for the backward pass.
struct BackwardWorkspace {
  Tensor grad_output{Shape{1}};
  Tensor grad_hidden;
  Tensor grad_flat;
  std::array<Tensor, kConvLayers> grad_conv;
};

inline void check_frame(const Network& net, const Tensor& frame) {
  if (frame.shape() != net.config.input_shape()) {
    throw ShapeError("frame shape " + shape_string(frame.shape()) + " does not match network input " +
                     shape_string(net.config.input_shape()));
  }
}

inline float forward(const Network& net, const Tensor& frame, ForwardCache& cache) {
  check_frame(net, frame);
  const Tensor* x = &frame;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    conv2d_forward_into(*x, net.convs[i], cache.conv[i]);
    relu_inplace(cache.conv[i]);
    x = &cache.conv[i];
  }
  dense_forward_into(*x, net.dense[0], cache.hidden);
  relu_inplace(cache.hidden);
  dense_forward_into(cache.hidden, net.dense[1], cache.output);
  return cache.output[0];
}

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
inline void backward(const Network& net, const Tensor& frame, const ForwardCache& cache,
                     float grad_output, NetworkGradients& grads, BackwardWorkspace& ws) {
  ws.grad_output[0] = grad_output;
  dense_backward_accumulate(cache.hidden, net.dense[1], ws.grad_output, grads.dense_weights[1],
                            grads.dense_bias[1], &ws.grad_hidden);
  relu_backward_inplace(cache.hidden, ws.grad_hidden);
  const Tensor& last_conv = cache.conv[kConvLayers - 1];
  dense_backward_accumulate(last_conv, net.dense[0], ws.grad_hidden, grads.dense_weights[0],
                            grads.dense_bias[0], &ws.grad_flat);
  ws.grad_conv[kConvLayers - 1] = ws.grad_flat.reshaped(last_conv.shape());
  for (std::size_t i = kConvLayers; i-- > 0;) {
    Tensor& g = ws.grad_conv[i];
    relu_backward_inplace(cache.conv[i], g);
    const Tensor& input = i == 0 ? frame : cache.conv[i - 1];
    Tensor* grad_in = i == 0 ? nullptr : &ws.grad_conv[i - 1];
    conv2d_backward_accumulate(input, net.convs[i], g, grads.conv_kernels[i], grads.conv_bias[i],
                               grad_in);
  }
}

// Steering angle in radians for a frame with pixels scaled to [0, 1].
inline float predict_steering(const Network& net, const Tensor& frame) {
  ForwardCache cache;
  return forward(net, frame, cache);
}

}  // namespace lanepilot::nn
