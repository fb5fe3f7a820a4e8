#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lanepilot/common/error.hpp"
#include "lanepilot/common/numfmt.hpp"
#include "lanepilot/common/rng.hpp"
#include "lanepilot/dataset/pgm.hpp"
#include "lanepilot/nn/train.hpp"
#include "lanepilot/sim/geometry.hpp"
#include "lanepilot/sim/render.hpp"

namespace lanepilot::dataset {

// One (frame, steering) training tuple.
struct SamplePair {
  std::int64_t timestamp_us = 0;
  std::string frame_file;  // relative to the dataset root
  double steering = 0.0;   // rad
  double speed = 0.0;      // m/s, 0 when absent

  void validate() const {
    if (timestamp_us < 0) throw FormatError("sample timestamp must be non-negative");
    if (!std::isfinite(steering) || std::abs(steering) > sim::kPi / 2.0) {
      throw FormatError("sample steering must be finite with |steering| <= pi/2");
    }
  }
};

enum class Provenance { Ingested, Synthetic };

inline std::string to_string(Provenance p) { return p == Provenance::Synthetic ? "synthetic" : "ingested"; }

// Samples plus their decoded frames (frames[i] belongs to samples[i]).
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<SamplePair> samples;
  std::vector<sim::CameraFrame> frames;
  std::size_t height = 0;
  std::size_t width = 0;
  Provenance provenance = Provenance::Ingested;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();

  std::size_t size() const { return samples.size(); }
};

inline std::string frame_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frames/%06zu.pgm", index);
  return buf;
}

// ---------------------------------------------------------------------------
// Timestamp pairing

struct ImageRecord {
  std::int64_t timestamp_us = 0;
  std::string frame_file;
};

struct SteeringRecord {
  std::int64_t timestamp_us = 0;
  double steering = 0.0;
  double speed = 0.0;
};

struct PairingResult {
  std::vector<SamplePair> pairs;
  std::size_t dropped = 0;
};

inline constexpr std::int64_t kDefaultMaxSkewUs = 50'000;

// Pairs every image with the steering record nearest in time. Images with no
// record within max_skew_us are dropped; on an exact tie the earlier record
// wins.
inline PairingResult pair_by_timestamp(const std::vector<ImageRecord>& images,
                                       const std::vector<SteeringRecord>& steering,
                                       std::int64_t max_skew_us = kDefaultMaxSkewUs) {
  if (images.empty() || steering.empty()) throw FormatError("pair_by_timestamp: empty log");
  auto ts_less = [](const auto& a, const auto& b) { return a.timestamp_us < b.timestamp_us; };
  if (!std::is_sorted(images.begin(), images.end(), ts_less) ||
      !std::is_sorted(steering.begin(), steering.end(), ts_less)) {
    throw FormatError("pair_by_timestamp: logs must be sorted by timestamp");
  }
  PairingResult out;
  for (const auto& img : images) {
    auto it = std::lower_bound(steering.begin(), steering.end(), img.timestamp_us,
                               [](const SteeringRecord& r, std::int64_t t) { return r.timestamp_us < t; });
    const SteeringRecord* best = nullptr;
    std::int64_t best_skew = 0;
    if (it != steering.begin()) {
      best = &*(it - 1);
      best_skew = img.timestamp_us - best->timestamp_us;
    }
    if (it != steering.end()) {
      const std::int64_t skew = it->timestamp_us - img.timestamp_us;
      if (!best || skew < best_skew) {
        best = &*it;
        best_skew = skew;
      }
    }
    if (!best || best_skew > max_skew_us) {
      ++out.dropped;
      continue;
    }
    out.pairs.push_back({img.timestamp_us, img.frame_file, best->steering, best->speed});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Shuffled 80/20 split of n samples; |train| = floor(0.8 n).
inline Split split_80_20(std::size_t n, std::uint64_t seed) {
  if (n < 5) throw ConfigError("split_80_20 needs at least 5 samples, got " + std::to_string(n));
  const auto order = permutation(n, mix_seed(seed, 0x5117ull));
  const std::size_t n_train = n * 4 / 5;
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

inline Split split_80_20(const DatasetManifest& m, std::uint64_t seed) { return split_80_20(m.size(), seed); }

// Frames as network tensors with float targets, owning their storage.
struct LabeledSet {
  std::vector<nn::Tensor> frames;
  std::vector<float> targets;

  nn::LabeledView view() const { return {frames, targets}; }
  std::size_t size() const { return frames.size(); }
};

inline LabeledSet to_labeled(const DatasetManifest& m, const std::vector<std::size_t>& indices) {
  if (m.frames.size() != m.samples.size()) throw FormatError("manifest frames are not loaded");
  LabeledSet out;
  out.frames.reserve(indices.size());
  out.targets.reserve(indices.size());
  for (auto i : indices) {
    out.frames.push_back(m.frames.at(i).to_tensor());
    out.targets.push_back(static_cast<float>(m.samples.at(i).steering));
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format: frames/%06d.pgm, log.csv, manifest.json

inline constexpr const char* kLogHeader = "timestamp_us,frame_file,steering_rad,speed_mps";

inline std::string log_csv(const std::vector<SamplePair>& samples) {
  std::ostringstream os;
  os << kLogHeader << '\n';
  for (const auto& s : samples) {
    os << s.timestamp_us << ',' << s.frame_file << ',' << format_double(s.steering) << ','
       << format_double(s.speed) << '\n';
  }
  return os.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::vector<SamplePair> parse_log_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("log.csv is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kLogHeader) throw FormatError("log.csv header must be '" + std::string(kLogHeader) + "'");
  std::vector<SamplePair> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4 && cells.size() != 3) {
      throw FormatError("log.csv line " + std::to_string(line_no) + ": expected 4 columns");
    }
    SamplePair s;
    try {
      s.timestamp_us = std::stoll(cells[0]);
      s.frame_file = cells[1];
      s.steering = std::stod(cells[2]);
      s.speed = cells.size() == 4 && !cells[3].empty() ? std::stod(cells[3]) : 0.0;
    } catch (const std::exception&) {
      throw FormatError("log.csv line " + std::to_string(line_no) + ": unparsable value");
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

inline nlohmann::json manifest_json(const DatasetManifest& m) {
  nlohmann::json j = {{"width", m.width},
                      {"height", m.height},
                      {"count", m.samples.size()},
                      {"provenance", to_string(m.provenance)},
                      {"seed", m.seed}};
  for (auto it = m.extra.begin(); it != m.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

inline void write_dataset(const DatasetManifest& m, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (m.frames.size() != m.samples.size()) throw FormatError("write_dataset: frames not loaded");
  fs::create_directories(dir / "frames");
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    write_pgm(dir / m.samples[i].frame_file, m.frames[i]);
  }
  std::ofstream log(dir / "log.csv", std::ios::binary | std::ios::trunc);
  log << log_csv(m.samples);
  std::ofstream man(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  man << manifest_json(m).dump(2) << '\n';
  if (!log || !man) throw Error("failed writing dataset to " + dir.string());
}

// Loads a dataset directory, checking that frames exist, share dimensions
// and that timestamps never decrease.
inline DatasetManifest load_dataset(const std::filesystem::path& dir) {
  DatasetManifest m;
  m.root = dir;
  std::ifstream log(dir / "log.csv", std::ios::binary);
  if (!log) throw FormatError("missing log.csv in " + dir.string());
  m.samples = parse_log_csv(log);
  if (std::ifstream man(dir / "manifest.json"); man) {
    try {
      const auto j = nlohmann::json::parse(man);
      m.seed = j.value("seed", std::uint64_t{0});
      m.provenance = j.value("provenance", std::string("ingested")) == "synthetic"
                         ? Provenance::Synthetic
                         : Provenance::Ingested;
      m.extra = j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("manifest.json: ") + e.what());
    }
  }
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    if (i > 0 && m.samples[i].timestamp_us < m.samples[i - 1].timestamp_us) {
      throw FormatError("log.csv timestamps decrease at row " + std::to_string(i + 1));
    }
    auto frame = read_pgm(dir / m.samples[i].frame_file);
    if (i == 0) {
      m.height = frame.height;
      m.width = frame.width;
    } else if (frame.height != m.height || frame.width != m.width) {
      throw FormatError("frame " + m.samples[i].frame_file + " has different dimensions");
    }
    m.frames.push_back(std::move(frame));
  }
  return m;
}

}  // namespace lanepilot::dataset
