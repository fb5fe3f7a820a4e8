#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lanepilot/common/error.hpp"
#include "lanepilot/common/numfmt.hpp"
#include "lanepilot/dataset/batching.hpp"
#include "lanepilot/nn/network.hpp"

namespace lanepilot::nn {

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t epochs = 30;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 1;

  // Default learning rate per network profile. Steering labels on the
  // synthetic data are small (rms ~0.04 rad), so the tiny profile needs a
  // large step to make progress in 30 epochs of plain SGD.
  static float default_learning_rate(const std::string& profile) {
    return profile == "tiny" ? 0.2f : 1e-3f;
  }

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be positive and finite");
    }
  }
};

// Frames with steering targets. Frames must outlive the view.
struct LabeledView {
  std::span<const Tensor> frames;
  std::span<const float> targets;

  std::size_t size() const { return frames.size(); }
};

struct LossPoint {
  std::size_t epoch = 0;  // 0 = before any update
  double train_mse = 0.0;
  double val_mse = 0.0;
};

using LossCurve = std::vector<LossPoint>;

inline std::string loss_curve_csv(const LossCurve& curve) {
  std::ostringstream os;
  os << "epoch,train_mse,val_mse\n";
  for (const auto& p : curve) {
    os << p.epoch << ',' << format_double(p.train_mse) << ',' << format_double(p.val_mse) << '\n';
  }
  return os.str();
}

// Mean squared error of the network over a labeled set (forward only).
inline double evaluate_mse(const Network& net, LabeledView data) {
  if (data.size() == 0) return 0.0;
  ForwardCache cache;
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double d = static_cast<double>(forward(net, data.frames[i], cache)) - data.targets[i];
    sum += d * d;
  }
  return sum / static_cast<double>(data.size());
}

struct TrainResult {
  Network net;
  LossCurve curve;
};

using EpochCallback = std::function<void(const LossPoint&)>;

// Mini-batch SGD on MSE: w <- w - lr * (batch-mean gradient). Returns the
// trained network and per-epoch train/validation MSE (row 0 is the initial
// evaluation). The train column for epochs >= 1 is the mean of per-sample
// squared errors seen during that epoch.
inline TrainResult train(Network net, LabeledView train_set, LabeledView val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw ConfigError("train: empty training set");
  if (train_set.frames.size() != train_set.targets.size() ||
      val_set.frames.size() != val_set.targets.size()) {
    throw ShapeError("train: frame and target counts differ");
  }

  TrainResult result;
  result.curve.push_back({0, evaluate_mse(net, train_set), evaluate_mse(net, val_set)});
  if (on_epoch) on_epoch(result.curve.back());

  NetworkGradients grads(net);
  ForwardCache cache;
  BackwardWorkspace ws;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_sq = 0.0;
    const auto batches = dataset::batch_iter(train_set.size(), cfg.batch_size, epoch, cfg.seed);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      grads.zero();
      const float scale = 2.0f / static_cast<float>(batch.size());
      for (std::size_t idx : batch) {
        const float pred = forward(net, train_set.frames[idx], cache);
        const float diff = pred - train_set.targets[idx];
        if (!std::isfinite(diff)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b) + ", sample " + std::to_string(idx));
        }
        epoch_sq += static_cast<double>(diff) * diff;
        backward(net, train_set.frames[idx], cache, scale * diff, grads, ws);
      }
      const float lr = cfg.learning_rate;
      for (std::size_t i = 0; i < kConvLayers; ++i) {
        auto& k = net.convs[i].kernels.storage();
        for (std::size_t j = 0; j < k.size(); ++j) k[j] -= lr * grads.conv_kernels[i][j];
        auto& bb = net.convs[i].bias.storage();
        for (std::size_t j = 0; j < bb.size(); ++j) bb[j] -= lr * grads.conv_bias[i][j];
      }
      for (std::size_t i = 0; i < kDenseLayers; ++i) {
        auto& w = net.dense[i].weights.storage();
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * grads.dense_weights[i][j];
        auto& bb = net.dense[i].bias.storage();
        for (std::size_t j = 0; j < bb.size(); ++j) bb[j] -= lr * grads.dense_bias[i][j];
      }
    }
    const LossPoint point{epoch, epoch_sq / static_cast<double>(train_set.size()),
                          evaluate_mse(net, val_set)};
    if (!std::isfinite(point.train_mse) || !std::isfinite(point.val_mse)) {
      throw NumericError("non-finite epoch loss at epoch " + std::to_string(epoch));
    }
    result.curve.push_back(point);
    if (on_epoch) on_epoch(point);
  }
  result.net = std::move(net);
  return result;
}

}  // namespace lanepilot::nn
