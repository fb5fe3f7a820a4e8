#pragma once

// Simulation session behind the server: owns the episode, drains the
// ingress queue once per tick and produces the outbound messages. Nothing
// here touches sockets, so it is driven directly by tests.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lanepilot/dataset/dataset.hpp"
#include "lanepilot/dataset/pgm.hpp"
#include "lanepilot/eval/episode.hpp"
#include "lanepilot/eval/runlog.hpp"
#include "lanepilot/nn/model_io.hpp"
#include "lanepilot/service/wire.hpp"
#include "lanepilot/sim/scenario.hpp"

namespace lanepilot::service {

namespace fs = std::filesystem;

inline constexpr const char* kModelExtension = ".strn";

enum class SessionMode { TeleopRecord, AutonomousEval };

inline const char* to_string(SessionMode m) {
  return m == SessionMode::TeleopRecord ? "teleop_record" : "autonomous_eval";
}

inline SessionMode session_mode_from_string(const std::string& s) {
  if (s == "teleop_record") return SessionMode::TeleopRecord;
  if (s == "autonomous_eval") return SessionMode::AutonomousEval;
  throw ConfigError("unknown session mode '" + s + "' (expected teleop_record or autonomous_eval)");
}

// Root of all persisted state: LANEPILOT_DATA_DIR, else ./lanepilot-data.
inline fs::path data_dir_from_env() {
  if (const char* env = std::getenv("LANEPILOT_DATA_DIR"); env && *env) return env;
  return fs::current_path() / "lanepilot-data";
}

// Resolves a model argument: absolute or relative paths that exist are used
// as-is, otherwise the name is looked up under <data>/models.
inline fs::path resolve_model(const fs::path& data_dir, const std::string& name) {
  const fs::path direct(name);
  if (fs::exists(direct)) return direct;
  fs::path p = data_dir / "models" / name;
  if (!p.has_extension()) p += kModelExtension;
  if (!fs::exists(p)) throw ConfigError("model '" + name + "' not found");
  return p;
}

// Models available under <data>/models.
inline nlohmann::json list_models(const fs::path& data_dir) {
  nlohmann::json out = nlohmann::json::array();
  const auto dir = data_dir / "models";
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == kModelExtension) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    nlohmann::json entry{{"name", p.stem().string()}, {"bytes", fs::file_size(p)}};
    try {
      nlohmann::json header;
      const auto net = nn::load_model(p, &header);
      entry["digest"] = eval::model_digest(net);
      entry["profile"] = header.value("profile", std::string());
      entry["input"] = {net.config.input_height, net.config.input_width};
      if (header.contains("training")) entry["training"] = header["training"];
    } catch (const std::exception& e) {
      entry["error"] = e.what();
    }
    out.push_back(std::move(entry));
  }
  return out;
}

// First free "<prefix>-NNNN" directory name under `parent`.
inline std::string next_id(const fs::path& parent, const char* prefix) {
  for (unsigned i = 1;; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s-%04u", prefix, i);
    if (!fs::exists(parent / buf)) return buf;
  }
}

inline bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

struct SessionConfig {
  fs::path data_dir;
  sim::Scenario scenario;
  SessionMode mode = SessionMode::TeleopRecord;
  std::optional<fs::path> model;   // required for autonomous_eval
  double eval_duration = 3600.0;  // s of simulated time before a run is closed
  std::uint64_t seed = 1;
};

// Messages produced by one tick. Telemetry goes to every client; the frame
// may be dropped for slow clients; errors are addressed to one client.
struct TickOutput {
  std::uint64_t tick = 0;
  nlohmann::json telemetry;
  std::string frame;
  std::vector<std::pair<std::uint64_t, std::string>> errors;
};

// Telemetry serialized for one client, who learns whether it holds control.
inline std::string telemetry_for(nlohmann::json telemetry, bool authority) {
  telemetry["authority"] = authority;
  return telemetry.dump();
}

class Session {
 public:
  explicit Session(SessionConfig cfg) : cfg_(std::move(cfg)) { start(); }

  ~Session() {
    try {
      close();
    } catch (...) {
    }
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  // --- client bookkeeping (any thread) --------------------------------------

  std::uint64_t connect() {
    std::lock_guard lock(mu_);
    const auto id = next_client_++;
    clients_.push_back(id);
    if (!authority_) authority_ = id;
    return id;
  }

  void disconnect(std::uint64_t id) {
    std::lock_guard lock(mu_);
    std::erase(clients_, id);
    if (authority_ == id) authority_ = clients_.empty() ? std::nullopt : std::optional(clients_.front());
  }

  std::optional<std::uint64_t> authority() const {
    std::lock_guard lock(mu_);
    return authority_;
  }

  std::size_t client_count() const {
    std::lock_guard lock(mu_);
    return clients_.size();
  }

  // Queues a raw client message; it is interpreted at the next tick.
  void post(std::uint64_t client, std::string text) {
    std::lock_guard lock(mu_);
    inbox_.push_back({client, std::move(text)});
  }

  // --- simulation loop (single owner) ---------------------------------------

  bool running() const { return episode_ && !stopped_; }

  // Advances the simulation by one sensing tick. Returns nothing once the
  // episode has ended (run closed, or the vehicle left an open track).
  std::optional<TickOutput> tick() {
    std::deque<Inbound> inbox;
    std::optional<std::uint64_t> authority;
    {
      std::lock_guard lock(mu_);
      inbox.swap(inbox_);
      authority = authority_;
    }
    TickOutput out;
    if (!running()) {
      for (const auto& m : inbox) out.errors.emplace_back(m.client, error_message(std::nullopt, "session is not running"));
      if (out.errors.empty()) return std::nullopt;
      return out;
    }
    out.tick = episode_->log().ticks.size();
    const auto input = drain(inbox, authority, out);

    try {
      const auto& rec = episode_->step(input);
      if (recording_) record_sample(rec);
      out.telemetry = telemetry(rec);
      out.frame = frame_message(out.tick, episode_->last_frame());
    } catch (const OffTrackError& e) {
      stop(std::string("episode ended: ") + e.what());
      std::lock_guard lock(mu_);
      for (auto id : clients_) out.errors.emplace_back(id, error_message(out.tick, stop_reason_));
      return out.errors.empty() ? std::nullopt : std::optional(std::move(out));
    }
    if (episode_->done()) stop("run complete");
    return out;
  }

  // Ends the current episode (closing any recording and run) and starts a
  // new one with the given mode, model and scenario.
  void reconfigure(SessionMode mode, std::optional<fs::path> model, std::optional<sim::Scenario> scenario = {}) {
    close();
    cfg_.mode = mode;
    if (model) cfg_.model = std::move(model);
    if (scenario) cfg_.scenario = std::move(*scenario);
    start();
  }

  // Finalizes recordings and runs; the session stays stopped afterwards.
  void close() {
    if (recording_) finish_recording();
    if (episode_ && cfg_.mode == SessionMode::AutonomousEval && !run_written_) write_run();
    stopped_ = true;
  }

  nlohmann::json status() const {
    nlohmann::json j{{"mode", to_string(cfg_.mode)},
                     {"scenario", cfg_.scenario.name},
                     {"running", running()},
                     {"clients", client_count()},
                     {"recording", recording_},
                     {"stop_reason", stop_reason_}};
    const auto auth = authority();
    j["authority_client"] = auth ? nlohmann::json(*auth) : nlohmann::json(nullptr);
    j["model"] = net_ ? nlohmann::json(episode_->log().model_digest) : nlohmann::json(nullptr);
    j["run_id"] = run_id_.empty() ? nlohmann::json(nullptr) : nlohmann::json(run_id_);
    j["dataset_id"] = dataset_id_.empty() ? nlohmann::json(nullptr) : nlohmann::json(dataset_id_);
    if (episode_) {
      j["tick"] = episode_->log().ticks.size();
      j["elapsed"] = episode_->elapsed();
      j["interventions"] = episode_->log().interventions.size();
      j["autonomy"] = cfg_.mode == SessionMode::AutonomousEval ? nlohmann::json(episode_->live_autonomy())
                                                               : nlohmann::json(nullptr);
    }
    return j;
  }

  // Report of a run: the live one, or one persisted under <data>/runs.
  std::optional<nlohmann::json> report(const std::string& run_id) const {
    if (!valid_id(run_id)) return std::nullopt;
    if (run_id == run_id_ && episode_ && !run_written_) return report_json(episode_->log(), false);
    std::ifstream f(cfg_.data_dir / "runs" / run_id / "report.json");
    if (!f) return std::nullopt;
    return nlohmann::json::parse(f);
  }

  const eval::Episode* episode() const { return episode_.get(); }
  const SessionConfig& config() const { return cfg_; }
  const std::string& run_id() const { return run_id_; }
  const std::string& dataset_id() const { return dataset_id_; }
  fs::path dataset_path() const { return cfg_.data_dir / "datasets" / dataset_id_; }
  std::size_t recorded_samples() const { return samples_.size(); }

 private:
  struct Inbound {
    std::uint64_t client;
    std::string text;
  };

  void start() {
    stopped_ = false;
    stop_reason_.clear();
    run_written_ = false;
    run_id_.clear();
    net_.reset();
    eval::EpisodeOptions opt;
    opt.seed = cfg_.seed;
    if (cfg_.mode == SessionMode::AutonomousEval) {
      if (!cfg_.model) throw ConfigError("autonomous_eval needs a model");
      net_ = std::make_unique<nn::Network>(nn::load_model(*cfg_.model));
      opt.mode = eval::EpisodeMode::Human;
      opt.duration = cfg_.eval_duration;
      episode_ = std::make_unique<eval::Episode>(cfg_.scenario, *net_, opt);
      fs::create_directories(cfg_.data_dir / "runs");
      run_id_ = next_id(cfg_.data_dir / "runs", "run");
      fs::create_directories(cfg_.data_dir / "runs" / run_id_);
    } else {
      opt.mode = eval::EpisodeMode::Teleop;
      opt.duration = std::numeric_limits<double>::infinity();
      episode_ = std::make_unique<eval::Episode>(cfg_.scenario, opt);
    }
  }

  void stop(std::string reason) {
    stop_reason_ = std::move(reason);
    close();
  }

  eval::TickInput drain(const std::deque<Inbound>& inbox, std::optional<std::uint64_t> authority, TickOutput& out) {
    eval::TickInput input;
    const auto reject = [&](std::uint64_t client, const std::string& why) {
      out.errors.emplace_back(client, error_message(out.tick, why));
    };
    for (const auto& m : inbox) {
      ClientMessage msg;
      try {
        msg = parse_client_message(m.text);
      } catch (const FormatError& e) {
        reject(m.client, e.what());
        continue;
      }
      if (authority != m.client) {
        reject(m.client, "control authority is held by another client");
        continue;
      }
      const bool eval_mode = cfg_.mode == SessionMode::AutonomousEval;
      switch (msg.kind) {
        case MessageKind::Control:
          input.control = eval::HumanControl{msg.steering, msg.throttle};
          break;
        case MessageKind::TakeoverBegin:
        case MessageKind::TakeoverEnd:
          if (!eval_mode) {
            reject(m.client, "takeover is only available in autonomous_eval mode");
          } else if (msg.kind == MessageKind::TakeoverBegin) {
            input.takeover_begin = true;
            input.takeover_end = false;
          } else {
            input.takeover_end = true;
          }
          break;
        case MessageKind::RecordBegin:
          if (eval_mode) {
            reject(m.client, "recording is only available in teleop_record mode");
          } else if (!recording_) {
            begin_recording();
          }
          break;
        case MessageKind::RecordEnd:
          if (recording_) finish_recording();
          break;
        default:
          break;
      }
    }
    return input;
  }

  nlohmann::json telemetry(const eval::TickRecord& rec) const {
    const auto& ep = *episode_;
    nlohmann::json j{{"kind", "telemetry"},
                     {"tick", rec.tick},
                     {"t", rec.time},
                     {"pose", {{"x", rec.x}, {"y", rec.y}, {"heading", rec.heading}}},
                     {"speed", rec.speed},
                     {"mode", rec.mode_after},
                     {"lane", rec.lane},
                     {"target_lane", rec.target_lane},
                     {"zones", {{"left", rec.zone_left}, {"center", rec.zone_center}, {"right", rec.zone_right}}},
                     {"control", rec.control},
                     {"command", {{"omega", rec.omega}, {"target_speed", rec.target_speed}}},
                     {"session_mode", to_string(cfg_.mode)},
                     {"takeover", ep.intervention_active()},
                     {"interventions", ep.log().interventions.size()},
                     {"elapsed", ep.elapsed()},
                     {"recording", recording_},
                     {"samples", samples_.size()}};
    j["autonomy"] =
        cfg_.mode == SessionMode::AutonomousEval ? nlohmann::json(ep.live_autonomy()) : nlohmann::json(nullptr);
    return j;
  }

  void begin_recording() {
    fs::create_directories(cfg_.data_dir / "datasets");
    dataset_id_ = next_id(cfg_.data_dir / "datasets", "rec");
    fs::create_directories(dataset_path() / "frames");
    samples_.clear();
    recording_ = true;
  }

  // The pair is the frame shown this tick and the steering that drove it.
  void record_sample(const eval::TickRecord& rec) {
    dataset::SamplePair s;
    s.timestamp_us = static_cast<std::int64_t>(std::llround(rec.time * 1e6));
    s.frame_file = dataset::frame_file_name(samples_.size());
    s.steering = episode_->held_control().steering;
    s.speed = rec.speed;
    dataset::write_pgm(dataset_path() / s.frame_file, episode_->last_frame());
    samples_.push_back(std::move(s));
  }

  void finish_recording() {
    recording_ = false;
    const auto dir = dataset_path();
    std::ofstream log(dir / "log.csv", std::ios::binary | std::ios::trunc);
    log << dataset::log_csv(samples_);
    const auto& f = episode_->last_frame();
    dataset::DatasetManifest m;
    m.samples = samples_;
    m.height = f.height;
    m.width = f.width;
    m.extra = {{"source", "teleop"}, {"scenario", cfg_.scenario.name}};
    std::ofstream man(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    man << dataset::manifest_json(m).dump(2) << '\n';
    if (!log || !man) throw Error("failed writing recording to " + dir.string());
  }

  static nlohmann::json report_json(const eval::RunLog& log, bool final) {
    auto j = log.elapsed > 0.0 ? log.report().to_json() : eval::AutonomyReport{}.to_json();
    j["scenario"] = log.scenario;
    j["model"] = log.model_digest;
    j["final"] = final;
    nlohmann::json iv = nlohmann::json::array();
    for (const auto& r : log.interventions) {
      iv.push_back({{"start", r.start},
                    {"duration", r.duration},
                    {"source", eval::to_string(r.source)},
                    {"actual_span", r.actual_span}});
    }
    j["intervention_records"] = std::move(iv);
    return j;
  }

  void write_run() {
    run_written_ = true;
    const auto dir = cfg_.data_dir / "runs" / run_id_;
    const auto& log = episode_->log();
    eval::write_run_log(log, dir / "run.jsonl");
    auto j = report_json(log, true);
    j["digest"] = eval::replay_hash(log);
    std::ofstream f(dir / "report.json", std::ios::binary | std::ios::trunc);
    f << j.dump(2) << '\n';
    if (!f) throw Error("failed writing run report to " + dir.string());
  }

  SessionConfig cfg_;
  std::unique_ptr<nn::Network> net_;
  std::unique_ptr<eval::Episode> episode_;
  bool stopped_ = false;
  std::string stop_reason_;
  std::string run_id_;
  bool run_written_ = false;
  std::string dataset_id_;
  bool recording_ = false;
  std::vector<dataset::SamplePair> samples_;

  mutable std::mutex mu_;
  std::deque<Inbound> inbox_;
  std::vector<std::uint64_t> clients_;
  std::optional<std::uint64_t> authority_;
  std::uint64_t next_client_ = 1;
};

}  // namespace lanepilot::service
