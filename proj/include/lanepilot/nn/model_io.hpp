#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "lanepilot/common/error.hpp"
#include "lanepilot/nn/network.hpp"

namespace lanepilot::nn {

// Model file layout:
//   "STRN1\0" | u32 LE header length | JSON header | f32 LE arrays
// Arrays follow parameter order: conv kernels, conv bias (x4), dense
// weights, dense bias (x2).
inline constexpr char kModelMagic[6] = {'S', 'T', 'R', 'N', '1', '\0'};

inline nlohmann::json model_header(const Network& net, const nlohmann::json& training = {}) {
  const auto& c = net.config;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    layers.push_back({{"type", "conv"},
                      {"kernels", net.convs[i].kernels.shape()},
                      {"bias", net.convs[i].bias.shape()},
                      {"stride", net.convs[i].stride},
                      {"padding", "same"}});
  }
  for (std::size_t i = 0; i < kDenseLayers; ++i) {
    layers.push_back({{"type", "dense"},
                      {"weights", net.dense[i].weights.shape()},
                      {"bias", net.dense[i].bias.shape()}});
  }
  nlohmann::json h = {{"format", "STRN1"},
                      {"profile", c.profile},
                      {"input", {c.input_channels, c.input_height, c.input_width}},
                      {"conv_channels", c.conv_channels},
                      {"hidden_units", c.hidden_units},
                      {"seed", c.seed},
                      {"parameter_count", net.parameter_count()},
                      {"layers", layers}};
  if (!training.is_null()) h["training"] = training;
  return h;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

inline std::string serialize_model(const Network& net, const nlohmann::json& training = {}) {
  const std::string header = model_header(net, training).dump();
  std::string out(kModelMagic, sizeof(kModelMagic));
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const Tensor* t : net.parameters()) {
    for (float v : t->data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Network deserialize_model(const std::string& bytes, nlohmann::json* header_out = nullptr) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < sizeof(kModelMagic) || std::memcmp(p, kModelMagic, sizeof(kModelMagic)) != 0) {
    throw FormatError("model file: bad magic (expected STRN1)");
  }
  std::size_t pos = sizeof(kModelMagic);
  if (bytes.size() < pos + 4) throw TruncatedError("model file: truncated header length");
  const std::uint32_t header_len = detail::get_u32(p + pos);
  pos += 4;
  if (bytes.size() < pos + header_len) throw TruncatedError("model file: truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                              bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: header is not valid JSON: ") + e.what());
  }
  pos += header_len;

  NetConfig cfg;
  std::vector<Shape> declared;
  try {
    cfg.profile = h.at("profile").get<std::string>();
    const auto input = h.at("input").get<std::vector<std::size_t>>();
    if (input.size() != 3) throw FormatError("model file: input must be [C,H,W]");
    cfg.input_channels = input[0];
    cfg.input_height = input[1];
    cfg.input_width = input[2];
    cfg.conv_channels = h.at("conv_channels").get<std::array<std::size_t, kConvLayers>>();
    cfg.hidden_units = h.at("hidden_units").get<std::size_t>();
    cfg.seed = h.at("seed").get<std::uint64_t>();
    const auto& layers = h.at("layers");
    if (!layers.is_array()) throw FormatError("model file: layers must be an array");
    std::size_t convs = 0, denses = 0;
    for (const auto& l : layers) {
      const auto type = l.at("type").get<std::string>();
      if (type == "conv") {
        ++convs;
        declared.push_back(l.at("kernels").get<Shape>());
      } else if (type == "dense") {
        ++denses;
        declared.push_back(l.at("weights").get<Shape>());
      } else {
        throw FormatError("model file: unknown layer type '" + type + "'");
      }
      declared.push_back(l.at("bias").get<Shape>());
    }
    if (convs != kConvLayers || denses != kDenseLayers) {
      throw FormatError("model file: expected 4 conv + 2 dense layers, header declares " +
                        std::to_string(convs) + " + " + std::to_string(denses));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: malformed header: ") + e.what());
  }
  cfg.validate();

  const auto expected = expected_parameter_shapes(cfg);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (declared[i] != expected[i]) {
      throw ShapeError("model file: array " + std::to_string(i) + " declared " +
                       shape_string(declared[i]) + " but config implies " +
                       shape_string(expected[i]));
    }
  }

  Network net;
  net.config = cfg;
  std::size_t layer_idx = 0;
  for (Tensor* t : net.parameters()) {
    const Shape& s = expected[layer_idx];
    const std::size_t n = shape_volume(s);
    if (bytes.size() < pos + 4 * n) {
      throw TruncatedError("model file: truncated at array " + std::to_string(layer_idx) + " of " +
                           std::to_string(expected.size()));
    }
    std::vector<float> data(n);
    for (std::size_t j = 0; j < n; ++j, pos += 4) {
      data[j] = std::bit_cast<float>(detail::get_u32(p + pos));
    }
    *t = Tensor(s, std::move(data));
    ++layer_idx;
  }
  if (pos != bytes.size()) throw FormatError("model file: trailing bytes after parameter arrays");
  for (std::size_t i = 0; i < kConvLayers; ++i) net.convs[i].stride = kConvStride[i];
  if (header_out) *header_out = std::move(h);
  return net;
}

inline void save_model(const Network& net, const std::filesystem::path& path,
                       const nlohmann::json& training = {}) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open model file for writing: " + path.string());
  const auto bytes = serialize_model(net, training);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing model file: " + path.string());
}

inline Network load_model(const std::filesystem::path& path, nlohmann::json* header_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open model file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes, header_out);
}

}  // namespace lanepilot::nn
