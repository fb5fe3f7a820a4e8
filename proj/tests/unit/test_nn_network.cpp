#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "lanepilot/nn/model_io.hpp"
#include "lanepilot/nn/network.hpp"
#include "lanepilot/nn/train.hpp"

using namespace lanepilot;
using namespace lanepilot::nn;

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(a) / static_cast<double>(b)));
}

// Parameter shapes derived by hand from SAME-padding arithmetic.
std::vector<Shape> shape_oracle(std::size_t h, std::size_t w, std::size_t in_c,
                                std::array<std::size_t, 4> ch, std::size_t hidden) {
  const std::size_t k[4] = {5, 5, 5, 3}, s[4] = {2, 2, 2, 1};
  std::vector<Shape> out;
  for (int i = 0; i < 4; ++i) {
    out.push_back({ch[i], in_c, k[i], k[i]});
    out.push_back({ch[i]});
    in_c = ch[i];
    h = ceil_div(h, s[i]);
    w = ceil_div(w, s[i]);
  }
  out.push_back({hidden, in_c * h * w});
  out.push_back({hidden});
  out.push_back({1, hidden});
  out.push_back({1});
  return out;
}

Tensor random_frame(const NetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(cfg.input_shape());
  for (float& v : t.data()) v = rng.uniform_float(0.0f, 1.0f);
  return t;
}

}  // namespace

TEST(InitNetwork, BiasesAreExactlyPointOne) {
  const auto net = init_network(NetConfig::tiny(7));
  for (const auto& c : net.convs)
    for (float b : c.bias.data()) EXPECT_EQ(b, 0.1f);
  for (const auto& d : net.dense)
    for (float b : d.bias.data()) EXPECT_EQ(b, 0.1f);
}

TEST(InitNetwork, WeightsUniformInRange) {
  const auto net = init_network(NetConfig::tiny(7));
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto* t : net.parameters()) {
    if (t->rank() == 1) continue;
    for (float v : t->data()) {
      EXPECT_GE(v, -0.1f);
      EXPECT_LE(v, 0.1f);
      sum += v;
      ++n;
    }
  }
  EXPECT_NEAR(sum / static_cast<double>(n), 0.0, 0.005);
}

TEST(InitNetwork, SameSeedSameBytes) {
  EXPECT_EQ(serialize_model(init_network(NetConfig::tiny(3))), serialize_model(init_network(NetConfig::tiny(3))));
  EXPECT_NE(serialize_model(init_network(NetConfig::tiny(3))), serialize_model(init_network(NetConfig::tiny(4))));
}

TEST(InitNetwork, TinyLayerShapes) {
  const auto net = init_network(NetConfig::tiny());
  const auto expected = shape_oracle(32, 64, 1, {8, 12, 16, 16}, 32);
  ASSERT_EQ(expected[0], (Shape{8, 1, 5, 5}));
  ASSERT_EQ(expected[2], (Shape{12, 8, 5, 5}));
  ASSERT_EQ(expected[4], (Shape{16, 12, 5, 5}));
  ASSERT_EQ(expected[6], (Shape{16, 16, 3, 3}));
  const auto params = net.parameters();
  ASSERT_EQ(params.size(), expected.size());
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i]->shape(), expected[i]) << i;
}

TEST(InitNetwork, FullProfileShapesAndCount) {
  const auto cfg = NetConfig::full();
  EXPECT_EQ(expected_parameter_shapes(cfg), shape_oracle(66, 200, 1, {24, 36, 48, 64}, 100));
  EXPECT_EQ(init_network(cfg).parameter_count(), 1533421u);
}

TEST(InitNetwork, RejectsInvalidConfig) {
  auto cfg = NetConfig::tiny();
  cfg.hidden_units = 0;
  EXPECT_THROW(init_network(cfg), ConfigError);
  cfg = NetConfig::tiny();
  cfg.conv_channels[2] = 0;
  EXPECT_THROW(init_network(cfg), ConfigError);
  EXPECT_THROW(NetConfig::from_profile("huge"), ConfigError);
}

TEST(Predict, ZeroWeightsIgnoreInput) {
  auto net = init_network(NetConfig::tiny());
  for (auto* t : net.parameters()) {
    if (t->rank() > 1) t->fill(0.0f);
  }
  const float a = predict_steering(net, random_frame(net.config, 1));
  const float b = predict_steering(net, random_frame(net.config, 2));
  EXPECT_EQ(a, b);
  EXPECT_FLOAT_EQ(a, 0.1f);  // only the final bias survives
}

TEST(Predict, PureAndFinite) {
  const auto net = init_network(NetConfig::tiny(9));
  const auto frame = random_frame(net.config, 5);
  const float a = predict_steering(net, frame);
  EXPECT_TRUE(std::isfinite(a));
  EXPECT_EQ(a, predict_steering(net, frame));
  EXPECT_THROW(predict_steering(net, Tensor({1, 32, 63})), ShapeError);
}

TEST(Train, SingleSampleDescends) {
  const auto net = init_network(NetConfig::tiny(2));
  std::vector<Tensor> frames{random_frame(net.config, 8)};
  std::vector<float> targets{0.2f};
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-3f;
  const auto r = train(net, {frames, targets}, {frames, targets}, cfg);
  ASSERT_EQ(r.curve.size(), 2u);
  EXPECT_LT(r.curve[1].val_mse, r.curve[0].val_mse);
}

TEST(Train, DeterministicAndShortBatch) {
  const auto net = init_network(NetConfig::tiny(2));
  std::vector<Tensor> frames;
  std::vector<float> targets;
  for (std::uint64_t i = 0; i < 7; ++i) {
    frames.push_back(random_frame(net.config, 100 + i));
    targets.push_back(0.01f * static_cast<float>(i));
  }
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;  // 3 + 3 + 1
  cfg.learning_rate = 1e-2f;
  const auto a = train(net, {frames, targets}, {frames, targets}, cfg);
  const auto b = train(net, {frames, targets}, {frames, targets}, cfg);
  EXPECT_EQ(serialize_model(a.net), serialize_model(b.net));
  EXPECT_EQ(loss_curve_csv(a.curve), loss_curve_csv(b.curve));
  EXPECT_EQ(loss_curve_csv(a.curve).rfind("epoch,train_mse,val_mse\n", 0), 0u);
}

TEST(Train, Errors) {
  const auto net = init_network(NetConfig::tiny());
  TrainConfig cfg;
  EXPECT_THROW(train(net, {}, {}, cfg), ConfigError);
  std::vector<Tensor> frames{random_frame(net.config, 1)};
  std::vector<float> targets{NAN};
  EXPECT_THROW(train(net, {frames, targets}, {frames, targets}, cfg), NumericError);
  cfg.epochs = 0;
  std::vector<float> ok{0.0f};
  EXPECT_THROW(train(net, {frames, ok}, {frames, ok}, cfg), ConfigError);
}

TEST(ModelIo, RoundTripIsBitExact) {
  const auto net = init_network(NetConfig::tiny(42));
  const auto path = std::filesystem::temp_directory_path() / "lanepilot_roundtrip.strn";
  save_model(net, path, {{"epochs", 3}});
  nlohmann::json header;
  const auto back = load_model(path, &header);
  EXPECT_TRUE(back == net);
  EXPECT_EQ(serialize_model(back), serialize_model(net));
  EXPECT_EQ(header.at("training").at("epochs"), 3);
  EXPECT_EQ(header.at("profile"), "tiny");
  std::filesystem::remove(path);
}

TEST(ModelIo, BadMagic) {
  auto bytes = serialize_model(init_network(NetConfig::tiny()));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_model(bytes), FormatError);
}

TEST(ModelIo, TruncatedArrays) {
  const auto bytes = serialize_model(init_network(NetConfig::tiny()));
  // Drop the final dense layer's weights and bias.
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() - 4 * 33)), TruncatedError);
  EXPECT_THROW(deserialize_model(bytes.substr(0, 8)), TruncatedError);
}

TEST(ModelIo, HeaderShapeMismatch) {
  const auto net = init_network(NetConfig::tiny());
  auto header = model_header(net);
  header["layers"][1]["kernels"] = {12, 8, 3, 3};
  const std::string h = header.dump();
  std::string bytes(kModelMagic, 6);
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((h.size() >> (8 * i)) & 0xFF));
  bytes += h;
  EXPECT_THROW(deserialize_model(bytes), ShapeError);

  header = model_header(net);
  header["layers"].erase(5);
  const std::string h2 = header.dump();
  std::string bytes2(kModelMagic, 6);
  for (int i = 0; i < 4; ++i) bytes2.push_back(static_cast<char>((h2.size() >> (8 * i)) & 0xFF));
  bytes2 += h2;
  EXPECT_THROW(deserialize_model(bytes2), FormatError);
}
