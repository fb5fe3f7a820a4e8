#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lanepilot/common/error.hpp"
#include "lanepilot/common/hash.hpp"
#include "lanepilot/common/numfmt.hpp"
#include "lanepilot/eval/autonomy.hpp"

namespace lanepilot::eval {

// One 10 Hz decision tick.
struct TickRecord {
  std::size_t tick = 0;
  double time = 0.0;
  double x = 0.0, y = 0.0, heading = 0.0, speed = 0.0;
  double zone_left = 0.0, zone_center = 0.0, zone_right = 0.0;
  std::string estimate = "none";
  double estimate_speed = 0.0;
  double cnn_steering = 0.0;
  std::string mode_before = "CNN_FOLLOW";
  std::string mode_after = "CNN_FOLLOW";
  int lane = 2;
  int target_lane = 2;
  double omega = 0.0;
  double target_speed = 0.0;
  std::string control = "autonomy";  // autonomy | oracle | human
  std::string frame_hash;

  friend bool operator==(const TickRecord&, const TickRecord&) = default;
};

struct RunLog {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string model_digest;
  std::string mode = "oracle";  // oracle | human
  double duration = 0.0;        // requested, s
  double elapsed = 0.0;         // simulated, s
  double distance = 0.0;        // m
  std::size_t collisions = 0;
  std::vector<TickRecord> ticks;
  std::vector<InterventionRecord> interventions;

  AutonomyReport report() const {
    AutonomyReport r;
    r.interventions = interventions.size();
    r.elapsed = elapsed;
    r.autonomy = elapsed > 0.0 ? compute_autonomy(interventions.size(), elapsed) : 100.0;
    r.distance = distance;
    r.collisions = collisions;
    return r;
  }
};

namespace detail {

// Minimal JSON object writer with fixed key order and shortest round-trip
// number formatting, so the same log always serializes to the same bytes.
class LineWriter {
 public:
  LineWriter& key(const char* k) {
    out_ += first_ ? "{\"" : ",\"";
    out_ += k;
    out_ += "\":";
    first_ = false;
    return *this;
  }
  LineWriter& num(const char* k, double v) {
    key(k);
    out_ += format_double(v);
    return *this;
  }
  LineWriter& integer(const char* k, std::uint64_t v) {
    key(k);
    out_ += std::to_string(v);
    return *this;
  }
  LineWriter& str(const char* k, const std::string& v) {
    key(k);
    out_ += nlohmann::json(v).dump();
    return *this;
  }
  std::string done() {
    out_ += first_ ? "{}" : "}";
    return std::move(out_);
  }

 private:
  std::string out_;
  bool first_ = true;
};

inline std::string tick_line(const TickRecord& t) {
  return LineWriter()
      .str("type", "tick")
      .integer("tick", t.tick)
      .num("t", t.time)
      .num("x", t.x)
      .num("y", t.y)
      .num("heading", t.heading)
      .num("speed", t.speed)
      .num("zone_left", t.zone_left)
      .num("zone_center", t.zone_center)
      .num("zone_right", t.zone_right)
      .str("estimate", t.estimate)
      .num("estimate_speed", t.estimate_speed)
      .num("cnn_steering", t.cnn_steering)
      .str("mode_before", t.mode_before)
      .str("mode_after", t.mode_after)
      .integer("lane", static_cast<std::uint64_t>(t.lane))
      .integer("target_lane", static_cast<std::uint64_t>(t.target_lane))
      .num("omega", t.omega)
      .num("target_speed", t.target_speed)
      .str("control", t.control)
      .str("frame", t.frame_hash)
      .done();
}

inline std::string intervention_line(const InterventionRecord& r) {
  return LineWriter()
      .str("type", "intervention")
      .num("start", r.start)
      .num("duration", r.duration)
      .str("source", to_string(r.source))
      .str("trigger", r.trigger)
      .num("actual_span", r.actual_span)
      .done();
}

inline LineWriter summary_fields(const RunLog& log) {
  const auto rep = log.report();
  LineWriter w;
  w.str("type", "summary")
      .str("scenario", log.scenario)
      .integer("seed", log.seed)
      .str("model", log.model_digest)
      .str("mode", log.mode)
      .num("duration", log.duration)
      .num("elapsed", log.elapsed)
      .num("distance", log.distance)
      .integer("collisions", log.collisions)
      .integer("ticks", log.ticks.size())
      .integer("interventions", log.interventions.size())
      .num("autonomy", rep.autonomy);
  return w;
}

}  // namespace detail

// 64-bit FNV-1a over the canonical serialization (every tick line, every
// intervention line and the summary line without its digest field).
inline std::string replay_hash(const RunLog& log) {
  Fnv1a64 h;
  for (const auto& t : log.ticks) {
    h.update(detail::tick_line(t));
    h.update("\n");
  }
  for (const auto& r : log.interventions) {
    h.update(detail::intervention_line(r));
    h.update("\n");
  }
  h.update(detail::summary_fields(log).done());
  h.update("\n");
  return to_hex(h.digest());
}

inline std::string to_jsonl(const RunLog& log) {
  std::string out;
  for (const auto& t : log.ticks) out += detail::tick_line(t) + '\n';
  for (const auto& r : log.interventions) out += detail::intervention_line(r) + '\n';
  out += detail::summary_fields(log).str("digest", replay_hash(log)).done() + '\n';
  return out;
}

inline void write_run_log(const RunLog& log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write run log " + path.string());
  out << to_jsonl(log);
}

struct ParsedRunLog {
  RunLog log;
  std::string recorded_digest;
};

inline ParsedRunLog parse_run_log(std::istream& in) {
  ParsedRunLog p;
  bool have_summary = false;
  std::string line;
  std::size_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      if (have_summary) throw FormatError("run log: records after the summary");
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "tick") {
        TickRecord t;
        t.tick = j.at("tick").get<std::size_t>();
        t.time = j.at("t").get<double>();
        t.x = j.at("x").get<double>();
        t.y = j.at("y").get<double>();
        t.heading = j.at("heading").get<double>();
        t.speed = j.at("speed").get<double>();
        t.zone_left = j.at("zone_left").get<double>();
        t.zone_center = j.at("zone_center").get<double>();
        t.zone_right = j.at("zone_right").get<double>();
        t.estimate = j.at("estimate").get<std::string>();
        t.estimate_speed = j.at("estimate_speed").get<double>();
        t.cnn_steering = j.at("cnn_steering").get<double>();
        t.mode_before = j.at("mode_before").get<std::string>();
        t.mode_after = j.at("mode_after").get<std::string>();
        t.lane = j.at("lane").get<int>();
        t.target_lane = j.at("target_lane").get<int>();
        t.omega = j.at("omega").get<double>();
        t.target_speed = j.at("target_speed").get<double>();
        t.control = j.at("control").get<std::string>();
        t.frame_hash = j.at("frame").get<std::string>();
        p.log.ticks.push_back(std::move(t));
      } else if (type == "intervention") {
        InterventionRecord r;
        r.start = j.at("start").get<double>();
        r.duration = j.at("duration").get<double>();
        const auto src = j.at("source").get<std::string>();
        if (src != "human" && src != "oracle") throw FormatError("run log: unknown intervention source");
        r.source = src == "human" ? InterventionSource::Human : InterventionSource::Oracle;
        r.trigger = j.at("trigger").get<std::string>();
        r.actual_span = j.at("actual_span").get<double>();
        p.log.interventions.push_back(std::move(r));
      } else if (type == "summary") {
        p.log.scenario = j.at("scenario").get<std::string>();
        p.log.seed = j.at("seed").get<std::uint64_t>();
        p.log.model_digest = j.at("model").get<std::string>();
        p.log.mode = j.at("mode").get<std::string>();
        p.log.duration = j.at("duration").get<double>();
        p.log.elapsed = j.at("elapsed").get<double>();
        p.log.distance = j.at("distance").get<double>();
        p.log.collisions = j.at("collisions").get<std::size_t>();
        p.recorded_digest = j.value("digest", std::string());
        have_summary = true;
      } else {
        throw FormatError("run log: unknown record type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("run log line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!have_summary) throw TruncatedError("run log has no summary record");
  return p;
}

inline ParsedRunLog read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open run log " + path.string());
  return parse_run_log(in);
}

// Checks the structural invariants: tick indices and times advance at the
// sensing period and the elapsed time covers the charged interventions.
inline void validate_run_log(const RunLog& log, double tick_period = 0.1) {
  for (std::size_t i = 0; i < log.ticks.size(); ++i) {
    if (log.ticks[i].tick != i) throw FormatError("run log: tick index gap at " + std::to_string(i));
    if (i > 0 && !(log.ticks[i].time > log.ticks[i - 1].time)) {
      throw FormatError("run log: tick times must strictly increase");
    }
    if (std::abs(log.ticks[i].time - static_cast<double>(i) * tick_period) > 1e-6) {
      throw FormatError("run log: tick " + std::to_string(i) + " is off the sensing cadence");
    }
  }
  for (const auto& r : log.interventions) {
    if (r.duration != kInterventionSeconds) throw FormatError("run log: intervention duration must be 5 s");
  }
}

}  // namespace lanepilot::eval
