// lanepilot command-line tool: data generation, training, evaluation,
// replay verification, dataset ingestion and the teleop/eval service.

#include <CLI11.hpp>

#include <boost/asio.hpp>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "json.hpp"
#include "lanepilot/dataset/dataset.hpp"
#include "lanepilot/dataset/pgm.hpp"
#include "lanepilot/eval/episode.hpp"
#include "lanepilot/eval/runlog.hpp"
#include "lanepilot/nn/model_io.hpp"
#include "lanepilot/pipeline.hpp"
#include "lanepilot/service/server.hpp"
#include "lanepilot/service/session.hpp"
#include "lanepilot/sim/scenario.hpp"

namespace fs = std::filesystem;
using namespace lanepilot;

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string profile = "tiny";
  std::string scenario;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_scenario) {
  c.scenario = default_scenario;
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--profile", c.profile, "Network/camera profile: tiny or full")->capture_default_str();
  cmd->add_option("--scenario", c.scenario, "Scenario JSON file, or a name under the scenario directory")
      ->capture_default_str();
  cmd->add_option("--out", c.out, "Output path");
}

fs::path scenario_dir() {
  if (const char* env = std::getenv("LANEPILOT_SCENARIO_DIR"); env && *env) return env;
  return LANEPILOT_SCENARIO_DIR;
}

sim::Scenario resolve_scenario(const std::string& arg) {
  fs::path p(arg);
  if (!fs::exists(p)) p = scenario_dir() / (arg + ".json");
  if (!fs::exists(p)) throw ConfigError("scenario '" + arg + "' not found");
  return sim::load_scenario(p);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

// --- gen-data ---------------------------------------------------------------

struct GenData {
  Common c;
  std::size_t frames = 500;
  bool no_augment = false;
};

int run_gen_data(const GenData& g) {
  if (g.c.out.empty()) throw ConfigError("gen-data needs --out DIR");
  const auto sc = resolve_scenario(g.c.scenario);
  dataset::AugmentSpec augment;
  if (g.no_augment) augment = {{}, {}};
  const auto m = synthetic_dataset(sc, g.c.profile, g.frames, g.c.seed, augment);
  dataset::write_dataset(m, g.c.out);
  std::cout << "wrote " << m.size() << " samples (" << g.frames << " base frames x " << augment.per_frame()
            << ") to " << g.c.out << '\n';
  return 0;
}

// --- train ------------------------------------------------------------------

struct Train {
  Common c;
  std::string data;
  std::size_t frames = 500;
  std::size_t epochs = 30;
  std::size_t batch = 100;
  std::optional<float> lr;
  std::string loss_csv;
};

int run_train(const Train& t) {
  const auto profile = canonical_profile(t.c.profile);
  const fs::path out = t.c.out.empty() ? fs::path(std::string("model") + service::kModelExtension) : fs::path(t.c.out);
  dataset::DatasetManifest data;
  if (!t.data.empty()) {
    data = dataset::load_dataset(t.data);
  } else {
    data = synthetic_dataset(resolve_scenario(t.c.scenario), profile, t.frames, t.c.seed);
  }
  nn::TrainConfig tc;
  tc.epochs = t.epochs;
  tc.batch_size = t.batch;
  tc.seed = t.c.seed;
  tc.learning_rate = t.lr.value_or(nn::TrainConfig::default_learning_rate(profile));
  std::cerr << "training " << profile << " network on " << data.size() << " samples (lr " << tc.learning_rate
            << ")\n";
  const auto outcome = train_on(data, profile, tc, t.c.seed, [](const nn::LossPoint& p) {
    std::cerr << "epoch " << p.epoch << "  train " << p.train_mse << "  val " << p.val_mse << '\n';
  });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  nn::save_model(outcome.result.net, out, training_metadata(outcome, tc));
  const fs::path csv = t.loss_csv.empty() ? fs::path(out).replace_extension(".loss.csv") : fs::path(t.loss_csv);
  write_text(csv, nn::loss_curve_csv(outcome.result.curve));
  std::cout << "model " << out.string() << " (digest " << eval::model_digest(outcome.result.net) << ")\n"
            << "loss curve " << csv.string() << '\n'
            << "validation mse " << outcome.initial_val() << " -> " << outcome.final_val() << '\n';
  return 0;
}

// --- eval -------------------------------------------------------------------

struct Eval {
  Common c;
  std::string model;
  double duration = 300.0;
  double jitter = 0.0;
};

int run_eval(const Eval& e) {
  if (e.model.empty()) throw ConfigError("eval needs --model");
  const auto net = nn::load_model(service::resolve_model(service::data_dir_from_env(), e.model));
  eval::EpisodeOptions opt;
  opt.duration = e.duration;
  opt.seed = e.c.seed;
  opt.start_lateral_jitter = e.jitter;
  const auto log = eval::run_episode(resolve_scenario(e.c.scenario), net, opt);
  if (!e.c.out.empty()) eval::write_run_log(log, e.c.out);
  auto j = log.report().to_json();
  j["digest"] = eval::replay_hash(log);
  std::cout << j.dump(2) << '\n';
  return 0;
}

// --- replay -----------------------------------------------------------------

struct Replay {
  Common c;
  std::string log;
  bool verify = false;
  std::string model;
};

// Without --model the log is checked against its own recorded digest. With
// --model the episode is re-simulated and the digests compared.
int run_replay(const Replay& r, bool scenario_given) {
  if (!r.verify) throw ConfigError("replay currently supports --verify only");
  const auto parsed = eval::read_run_log(r.log);
  eval::validate_run_log(parsed.log);
  const auto recomputed = eval::replay_hash(parsed.log);
  if (parsed.recorded_digest.empty()) throw FormatError("run log has no recorded digest");
  if (recomputed != parsed.recorded_digest) {
    std::cerr << "digest mismatch: recorded " << parsed.recorded_digest << ", content hashes to " << recomputed
              << '\n';
    return 1;
  }
  if (!r.model.empty()) {
    const auto net = nn::load_model(service::resolve_model(service::data_dir_from_env(), r.model));
    const auto sc = resolve_scenario(scenario_given ? r.c.scenario : parsed.log.scenario);
    eval::EpisodeOptions opt;
    opt.duration = parsed.log.duration;
    opt.seed = parsed.log.seed;
    const auto rerun = eval::run_episode(sc, net, opt);
    const auto digest = eval::replay_hash(rerun);
    if (digest != parsed.recorded_digest) {
      std::cerr << "re-simulation digest " << digest << " differs from recorded " << parsed.recorded_digest << '\n';
      return 1;
    }
  }
  std::cout << "ok " << parsed.recorded_digest << '\n';
  return 0;
}

// --- ingest -----------------------------------------------------------------

struct Ingest {
  Common c;
  std::string images;
  std::string steering;
  std::int64_t max_skew_us = dataset::kDefaultMaxSkewUs;
};

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path, std::size_t min_cols) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {  // first non-empty line names the columns
      header = false;
      continue;
    }
    auto cells = dataset::split_csv_line(line);
    if (cells.size() < min_cols) {
      throw FormatError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                        std::to_string(min_cols) + " columns");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

// images CSV: timestamp_us,frame_file (PGM, relative to the CSV)
// steering CSV: timestamp_us,steering_rad[,speed_mps]
int run_ingest(const Ingest& in) {
  if (in.c.out.empty() || in.images.empty() || in.steering.empty()) {
    throw ConfigError("ingest needs --images, --steering and --out");
  }
  const fs::path image_dir = fs::path(in.images).parent_path();
  std::vector<dataset::ImageRecord> images;
  std::vector<dataset::SteeringRecord> steering;
  try {
    for (const auto& row : read_csv_rows(in.images, 2)) images.push_back({std::stoll(row[0]), row[1]});
    for (const auto& row : read_csv_rows(in.steering, 2)) {
      steering.push_back({std::stoll(row[0]), std::stod(row[1]), row.size() > 2 ? std::stod(row[2]) : 0.0});
    }
  } catch (const std::logic_error&) {
    throw FormatError("unparsable number in input logs");
  }
  const auto paired = dataset::pair_by_timestamp(images, steering, in.max_skew_us);
  dataset::DatasetManifest m;
  m.provenance = dataset::Provenance::Ingested;
  m.seed = in.c.seed;
  for (std::size_t i = 0; i < paired.pairs.size(); ++i) {
    auto s = paired.pairs[i];
    s.validate();
    auto frame = dataset::read_pgm(image_dir / s.frame_file);
    if (i == 0) {
      m.height = frame.height;
      m.width = frame.width;
    } else if (frame.height != m.height || frame.width != m.width) {
      throw FormatError("frame " + s.frame_file + " has different dimensions");
    }
    s.frame_file = dataset::frame_file_name(i);
    m.samples.push_back(std::move(s));
    m.frames.push_back(std::move(frame));
  }
  m.extra["dropped"] = paired.dropped;
  m.extra["max_skew_us"] = in.max_skew_us;
  dataset::write_dataset(m, in.c.out);
  std::cout << "paired " << m.size() << " samples, dropped " << paired.dropped << ", wrote " << in.c.out << '\n';
  return 0;
}

// --- serve ------------------------------------------------------------------

struct Serve {
  Common c;
  std::string mode = "teleop_record";
  std::string model;
  std::string host = "127.0.0.1";
  unsigned short port = 8080;
  std::string data_dir;
  double eval_duration = 3600.0;
};

int run_serve(const Serve& s) {
  service::SessionConfig cfg;
  cfg.data_dir = s.data_dir.empty() ? service::data_dir_from_env() : fs::path(s.data_dir);
  fs::create_directories(cfg.data_dir);
  cfg.scenario = resolve_scenario(s.c.scenario);
  cfg.mode = service::session_mode_from_string(s.mode);
  cfg.seed = s.c.seed;
  cfg.eval_duration = s.eval_duration;
  if (!s.model.empty()) cfg.model = service::resolve_model(cfg.data_dir, s.model);
  if (cfg.mode == service::SessionMode::TeleopRecord) {
    // Teleop frames are recorded at the profile's training resolution.
    cfg.scenario.cfg = world_for_profile(cfg.scenario, s.c.profile);
  }
  service::Session session(cfg);

  boost::asio::io_context ioc;
  service::ServerOptions opt;
  opt.data_dir = cfg.data_dir;
  opt.scenario_dir = scenario_dir();
  std::unique_ptr<service::Server> server;
  try {
    server = std::make_unique<service::Server>(
        ioc, session, service::tcp::endpoint(boost::asio::ip::make_address(s.host), s.port), opt);
  } catch (const boost::system::system_error& e) {
    throw Error("cannot listen on " + s.host + ":" + std::to_string(s.port) + ": " + e.code().message());
  }
  server->start();
  boost::asio::signal_set signals(ioc, SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code&, int) {
    server->stop();
    ioc.stop();
  });
  std::cout << "serving " << to_string(cfg.mode) << " on http://" << s.host << ":" << server->port()
            << " (ws at /ws, data in " << cfg.data_dir.string() << ")" << std::endl;
  ioc.run();
  session.close();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lanepilot: lane-following CNN pipeline, simulator and teleop service"};
  app.require_subcommand(1);

  GenData gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset with the scripted expert");
  add_common(gen_cmd, gen.c, "training");
  gen_cmd->add_option("--frames", gen.frames, "Base frames before augmentation")->capture_default_str();
  gen_cmd->add_flag("--no-augment", gen.no_augment, "Skip shifted/rotated re-renders");

  Train train;
  auto* train_cmd = app.add_subcommand("train", "Train a steering network");
  add_common(train_cmd, train.c, "training");
  train_cmd->add_option("--data", train.data, "Dataset directory (default: generate synthetic data)");
  train_cmd->add_option("--frames", train.frames, "Base frames when generating data")->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--batch", train.batch, "Batch size")->capture_default_str();
  train_cmd->add_option("--lr", train.lr, "Learning rate (default depends on profile)");
  train_cmd->add_option("--loss-csv", train.loss_csv, "Loss curve CSV (default: next to the model)");

  Eval ev;
  auto* eval_cmd = app.add_subcommand("eval", "Closed-loop evaluation with oracle interventions");
  add_common(eval_cmd, ev.c, "campus_loop");
  eval_cmd->add_option("--model", ev.model, "Model file or name under $LANEPILOT_DATA_DIR/models")->required();
  eval_cmd->add_option("--duration", ev.duration, "Simulated seconds")->capture_default_str();
  eval_cmd->add_option("--start-jitter", ev.jitter, "Seeded start lateral perturbation, m")->capture_default_str();

  Replay replay;
  auto* replay_cmd = app.add_subcommand("replay", "Verify a run log's digest");
  add_common(replay_cmd, replay.c, "");
  replay_cmd->add_option("log", replay.log, "Run log (JSONL)")->required()->check(CLI::ExistingFile);
  replay_cmd->add_flag("--verify", replay.verify, "Check the recorded digest");
  replay_cmd->add_option("--model", replay.model, "Also re-simulate with this model and compare");

  Ingest ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Pair timestamped image and steering logs into a dataset");
  add_common(ingest_cmd, ingest.c, "");
  ingest_cmd->add_option("--images", ingest.images, "CSV: timestamp_us,frame_file")->check(CLI::ExistingFile);
  ingest_cmd->add_option("--steering", ingest.steering, "CSV: timestamp_us,steering_rad[,speed_mps]")
      ->check(CLI::ExistingFile);
  ingest_cmd->add_option("--max-skew-us", ingest.max_skew_us, "Pairing tolerance")->capture_default_str();

  Serve serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP/WebSocket teleop and evaluation service");
  add_common(serve_cmd, serve.c, "campus_loop");
  serve_cmd->add_option("--mode", serve.mode, "teleop_record or autonomous_eval")->capture_default_str();
  serve_cmd->add_option("--model", serve.model, "Model for autonomous_eval");
  serve_cmd->add_option("--host", serve.host, "Listen address")->capture_default_str();
  serve_cmd->add_option("--port", serve.port, "Listen port")->capture_default_str();
  serve_cmd->add_option("--data-dir", serve.data_dir, "Data root (default $LANEPILOT_DATA_DIR)");
  serve_cmd->add_option("--eval-duration", serve.eval_duration, "Simulated seconds per eval run")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (train_cmd->parsed()) return run_train(train);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (replay_cmd->parsed()) return run_replay(replay, replay_cmd->count("--scenario") > 0);
    if (ingest_cmd->parsed()) return run_ingest(ingest);
    if (serve_cmd->parsed()) return run_serve(serve);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
