#pragma once

// End-to-end helpers shared by the command-line tool and the acceptance
// runner: synthetic data -> 80/20 split -> training.

#include <cstdint>
#include <string>

#include "lanepilot/dataset/dataset.hpp"
#include "lanepilot/dataset/synthetic.hpp"
#include "lanepilot/nn/network.hpp"
#include "lanepilot/nn/train.hpp"
#include "lanepilot/sim/scenario.hpp"

namespace lanepilot {

// "tiny" | "full" ("campus" is accepted for the full-size profile).
inline std::string canonical_profile(const std::string& name) {
  if (name == "tiny") return "tiny";
  if (name == "full" || name == "campus") return "full";
  throw ConfigError("unknown profile '" + name + "' (expected tiny or full)");
}

// World configuration of a scenario rendered at a profile's frame size.
inline sim::WorldConfig world_for_profile(const sim::Scenario& sc, const std::string& profile) {
  const auto net = nn::NetConfig::from_profile(canonical_profile(profile));
  sim::WorldConfig cfg = sc.cfg;
  cfg.profile = net.profile == "tiny" ? "tiny" : "campus";
  cfg.frame_height = net.input_height;
  cfg.frame_width = net.input_width;
  return cfg;
}

inline dataset::DatasetManifest synthetic_dataset(const sim::Scenario& sc, const std::string& profile,
                                                  std::size_t base_frames, std::uint64_t seed,
                                                  const dataset::AugmentSpec& augment = {}) {
  auto m = dataset::generate_synthetic(sc.track, world_for_profile(sc, profile), base_frames, augment, seed);
  m.extra["scenario"] = sc.name;
  m.extra["profile"] = canonical_profile(profile);
  return m;
}

struct TrainingOutcome {
  nn::TrainResult result;
  std::size_t train_size = 0;
  std::size_t val_size = 0;

  double initial_val() const { return result.curve.front().val_mse; }
  double final_val() const { return result.curve.back().val_mse; }
};

// Splits a loaded dataset 80/20 and trains a freshly initialized network.
inline TrainingOutcome train_on(const dataset::DatasetManifest& data, const std::string& profile,
                                nn::TrainConfig tc, std::uint64_t seed,
                                const nn::EpochCallback& on_epoch = {}) {
  const auto split = dataset::split_80_20(data, seed);
  const auto train_set = dataset::to_labeled(data, split.train);
  const auto val_set = dataset::to_labeled(data, split.validation);
  auto net = nn::init_network(nn::NetConfig::from_profile(canonical_profile(profile), seed));
  if (data.height != net.config.input_height || data.width != net.config.input_width) {
    throw ShapeError("dataset frames are " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                     " but the " + canonical_profile(profile) + " network expects " +
                     std::to_string(net.config.input_height) + "x" + std::to_string(net.config.input_width));
  }
  TrainingOutcome out;
  out.train_size = train_set.size();
  out.val_size = val_set.size();
  out.result = nn::train(std::move(net), train_set.view(), val_set.view(), tc, on_epoch);
  return out;
}

inline nlohmann::json training_metadata(const TrainingOutcome& t, const nn::TrainConfig& tc) {
  return {{"epochs", tc.epochs},
          {"batch_size", tc.batch_size},
          {"learning_rate", tc.learning_rate},
          {"seed", tc.seed},
          {"train_samples", t.train_size},
          {"val_samples", t.val_size},
          {"initial_val_mse", t.initial_val()},
          {"final_val_mse", t.final_val()}};
}

}  // namespace lanepilot
