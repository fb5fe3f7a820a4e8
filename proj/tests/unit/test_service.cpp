#include <gtest/gtest.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "json.hpp"
#include "lanepilot/dataset/dataset.hpp"
#include "lanepilot/eval/autonomy.hpp"
#include "lanepilot/eval/runlog.hpp"
#include "lanepilot/nn/model_io.hpp"
#include "lanepilot/service/server.hpp"
#include "lanepilot/service/session.hpp"
#include "lanepilot/service/wire.hpp"
#include "lanepilot/sim/scenario.hpp"

using namespace lanepilot;
using namespace lanepilot::service;
using json = nlohmann::json;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("lanepilot-svc-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

sim::Scenario loop_scenario() {
  auto sc = sim::load_scenario(std::string(LANEPILOT_SCENARIO_DIR) + "/campus_loop.json");
  sc.cfg.frame_height = 32;
  sc.cfg.frame_width = 64;
  return sc;
}

fs::path save_tiny_model(const fs::path& data_dir, const std::string& name = "tiny") {
  fs::create_directories(data_dir / "models");
  const auto p = data_dir / "models" / (name + kModelExtension);
  nn::save_model(nn::init_network(nn::NetConfig::tiny(3)), p);
  return p;
}

std::string control(double steering, double throttle) {
  return json{{"kind", "control"}, {"steering", steering}, {"throttle", throttle}}.dump();
}

std::string simple(const char* kind) { return json{{"kind", kind}}.dump(); }

SessionConfig teleop_config(const fs::path& dir) {
  SessionConfig c;
  c.data_dir = dir;
  c.scenario = loop_scenario();
  c.mode = SessionMode::TeleopRecord;
  return c;
}

SessionConfig eval_config(const fs::path& dir, double duration = 3600.0) {
  SessionConfig c;
  c.data_dir = dir;
  c.scenario = loop_scenario();
  c.mode = SessionMode::AutonomousEval;
  c.model = save_tiny_model(dir);
  c.eval_duration = duration;
  return c;
}

}  // namespace

TEST(Wire, ParsesClientMessages) {
  const auto m = parse_client_message(R"({"kind":"control","steering":-0.25,"throttle":0.5,"tick":7})");
  EXPECT_EQ(m.kind, MessageKind::Control);
  EXPECT_EQ(m.steering, -0.25);
  EXPECT_EQ(m.throttle, 0.5);
  EXPECT_EQ(m.tick, 7u);
  EXPECT_EQ(parse_client_message(R"({"kind":"takeover_begin"})").kind, MessageKind::TakeoverBegin);
  EXPECT_EQ(parse_client_message(R"({"kind":"record_end"})").kind, MessageKind::RecordEnd);
}

TEST(Wire, RejectsBadClientMessages) {
  EXPECT_THROW(parse_client_message("not json"), FormatError);
  EXPECT_THROW(parse_client_message(R"({"steering":0})"), FormatError);
  EXPECT_THROW(parse_client_message(R"({"kind":"warp"})"), FormatError);
  EXPECT_THROW(parse_client_message(R"({"kind":"telemetry"})"), FormatError);
  EXPECT_THROW(parse_client_message(R"({"kind":"control","steering":1.6,"throttle":0})"), FormatError);
  EXPECT_THROW(parse_client_message(R"({"kind":"control","steering":0,"throttle":1.5})"), FormatError);
  EXPECT_THROW(parse_client_message(R"({"kind":"control","steering":0})"), FormatError);
  EXPECT_THROW(parse_client_message(R"({"kind":"control","steering":0,"throttle":0,"tick":-1})"), FormatError);
}

TEST(Wire, Base64RoundTripsArbitraryBytes) {
  std::mt19937 gen(5);
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 100u, 1001u}) {
    std::string bytes(n, '\0');
    for (auto& c : bytes) c = static_cast<char>(gen() & 0xFF);
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
  EXPECT_EQ(base64_encode("Man"), "TWFu");
  EXPECT_EQ(base64_encode("Ma"), "TWE=");
  EXPECT_THROW(base64_decode("@@@@"), FormatError);
}

TEST(Wire, FrameMessageCarriesDecodablePgm) {
  sim::CameraFrame f{2, 3, {0, 128, 255, 255, 128, 0}};
  const auto j = json::parse(frame_message(42, f));
  EXPECT_EQ(j.at("kind"), "frame");
  EXPECT_EQ(j.at("tick"), 42);
  const auto back = dataset::decode_pgm(base64_decode(j.at("data").get<std::string>()));
  EXPECT_EQ(back.pixels, f.pixels);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.width, 3u);
}

TEST(Session, TelemetryTicksAreExactlyOneTenthSecondApart) {
  TempDir tmp;
  Session s(teleop_config(tmp.path()));
  std::optional<double> prev;
  for (int i = 0; i < 50; ++i) {
    const auto out = s.tick();
    ASSERT_TRUE(out);
    EXPECT_EQ(out->telemetry.at("tick").get<std::uint64_t>(), static_cast<std::uint64_t>(i));
    const double t = out->telemetry.at("t").get<double>();
    EXPECT_EQ(t, i / 10.0);
    if (prev) {
      EXPECT_NEAR(t - *prev, 0.1, 1e-12);
    }
    prev = t;
    EXPECT_EQ(json::parse(out->frame).at("tick"), i);
  }
}

TEST(Session, ControlAppliesNextTickAndIsHeld) {
  TempDir tmp;
  Session s(teleop_config(tmp.path()));
  const auto me = s.connect();
  s.post(me, control(0.1, 0.3));
  auto out = s.tick();
  ASSERT_TRUE(out);
  const auto& cfg = s.episode()->world().cfg.vehicle;
  const double v0 = out->telemetry.at("speed").get<double>();
  EXPECT_DOUBLE_EQ(out->telemetry.at("command").at("omega").get<double>(), sim::steering_to_omega(0.1, v0, cfg));
  EXPECT_DOUBLE_EQ(out->telemetry.at("command").at("target_speed").get<double>(), 0.3 * cfg.v_max);
  EXPECT_EQ(out->telemetry.at("control"), "human");

  // No input: zero-order hold of the last command.
  for (int i = 0; i < 3; ++i) {
    out = s.tick();
    const double v = out->telemetry.at("speed").get<double>();
    EXPECT_DOUBLE_EQ(out->telemetry.at("command").at("omega").get<double>(), sim::steering_to_omega(0.1, v, cfg));
    EXPECT_DOUBLE_EQ(out->telemetry.at("command").at("target_speed").get<double>(), 0.3 * cfg.v_max);
  }
}

TEST(Session, OnlyTheAuthorityHolderControls) {
  TempDir tmp;
  Session s(teleop_config(tmp.path()));
  const auto first = s.connect();
  const auto second = s.connect();
  EXPECT_EQ(s.authority(), first);
  s.post(second, control(0.4, 1.0));
  auto out = s.tick();
  ASSERT_EQ(out->errors.size(), 1u);
  EXPECT_EQ(out->errors[0].first, second);
  EXPECT_EQ(json::parse(out->errors[0].second).at("kind"), "error");
  EXPECT_NE(s.episode()->held_control().steering, 0.4);
  EXPECT_TRUE(json::parse(telemetry_for(out->telemetry, true)).at("authority").get<bool>());

  // Authority passes on when the holder leaves.
  s.disconnect(first);
  EXPECT_EQ(s.authority(), second);
  s.post(second, control(0.4, 1.0));
  out = s.tick();
  EXPECT_TRUE(out->errors.empty());
  EXPECT_EQ(s.episode()->held_control().steering, 0.4);
}

TEST(Session, MalformedMessagesGetErrorsNotCrashes) {
  TempDir tmp;
  Session s(teleop_config(tmp.path()));
  const auto me = s.connect();
  s.post(me, "{{{");
  s.post(me, control(3.0, 0.5));
  s.post(me, simple("takeover_begin"));  // wrong mode
  const auto out = s.tick();
  EXPECT_EQ(out->errors.size(), 3u);
  EXPECT_TRUE(s.episode()->log().interventions.empty());
}

TEST(Session, TeleopRecordingPairsFramesWithTransmittedSteering) {
  TempDir tmp;
  Session s(teleop_config(tmp.path()));
  const auto me = s.connect();
  s.post(me, simple("record_begin"));
  std::vector<double> sent;
  for (int i = 0; i < 300; ++i) {
    const double steering = 0.02 * std::sin(0.05 * i);
    sent.push_back(steering);
    s.post(me, control(steering, 0.24));
    ASSERT_TRUE(s.tick());
  }
  s.post(me, simple("record_end"));
  s.tick();
  const auto ds = dataset::load_dataset(s.dataset_path());
  ASSERT_EQ(ds.size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) {
    EXPECT_EQ(ds.samples[i].steering, sent[i]) << i;
    EXPECT_EQ(ds.samples[i].timestamp_us, static_cast<std::int64_t>(i) * 100000);
  }
  EXPECT_EQ(ds.frames.front().height, 32u);
}

TEST(Session, TakeoverCreatesOneInterventionAndAutonomyDrops) {
  TempDir tmp;
  Session s(eval_config(tmp.path()));
  const auto me = s.connect();
  for (int i = 0; i < 100; ++i) s.tick();
  s.post(me, simple("takeover_begin"));
  auto out = s.tick();
  EXPECT_EQ(out->telemetry.at("interventions"), 1);
  EXPECT_TRUE(out->telemetry.at("takeover").get<bool>());
  EXPECT_EQ(out->telemetry.at("control"), "human");
  for (int i = 0; i < 20; ++i) s.tick();
  s.post(me, simple("takeover_end"));
  s.tick();
  s.post(me, simple("takeover_begin"));
  s.tick();
  s.post(me, simple("takeover_end"));
  out = s.tick();
  const double elapsed = out->telemetry.at("elapsed").get<double>();
  EXPECT_EQ(out->telemetry.at("interventions"), 2);
  EXPECT_DOUBLE_EQ(out->telemetry.at("autonomy").get<double>(), eval::compute_autonomy(2, elapsed));
  const auto& records = s.episode()->log().interventions;
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].source, eval::InterventionSource::Human);
  EXPECT_NEAR(records[0].actual_span, 2.1, 1e-9);
}

TEST(Session, FinishedRunIsPersistedAndReplayable) {
  TempDir tmp;
  Session s(eval_config(tmp.path(), 2.0));
  int ticks = 0;
  while (s.tick()) ++ticks;
  EXPECT_EQ(ticks, 20);
  EXPECT_FALSE(s.running());
  const auto rep = s.report(s.run_id());
  ASSERT_TRUE(rep);
  EXPECT_TRUE(rep->at("final").get<bool>());
  EXPECT_EQ(rep->at("elapsed_s").get<double>(), 2.0);
  const auto parsed = eval::read_run_log(tmp.path() / "runs" / s.run_id() / "run.jsonl");
  EXPECT_EQ(eval::replay_hash(parsed.log), parsed.recorded_digest);
  EXPECT_EQ(rep->at("digest").get<std::string>(), parsed.recorded_digest);
  EXPECT_FALSE(s.report("../etc"));
  EXPECT_FALSE(s.report("run-9999"));
}

TEST(Session, ReconfigureSwitchesModes) {
  TempDir tmp;
  auto cfg = teleop_config(tmp.path());
  Session s(cfg);
  s.tick();
  const auto model = save_tiny_model(tmp.path(), "m2");
  s.reconfigure(SessionMode::AutonomousEval, model);
  EXPECT_EQ(s.status().at("mode"), "autonomous_eval");
  EXPECT_EQ(s.status().at("tick"), 0);
  const auto out = s.tick();
  EXPECT_EQ(out->telemetry.at("control"), "autonomy");
  EXPECT_EQ(out->telemetry.at("autonomy").get<double>(), 100.0);
  const auto first_run = s.run_id();
  s.reconfigure(SessionMode::TeleopRecord, std::nullopt);
  EXPECT_TRUE(fs::exists(tmp.path() / "runs" / first_run / "report.json"));
}

TEST(Session, EvalWithoutModelIsRejected) {
  TempDir tmp;
  auto cfg = teleop_config(tmp.path());
  cfg.mode = SessionMode::AutonomousEval;
  EXPECT_THROW(Session{cfg}, ConfigError);
  EXPECT_THROW(resolve_model(tmp.path(), "missing"), ConfigError);
}

TEST(Session, ListsModels) {
  TempDir tmp;
  save_tiny_model(tmp.path(), "alpha");
  const auto models = list_models(tmp.path());
  ASSERT_EQ(models.size(), 1u);
  EXPECT_EQ(models[0].at("name"), "alpha");
  EXPECT_EQ(models[0].at("digest").get<std::string>().size(), 16u);
}

// --- over real sockets ------------------------------------------------------

namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

struct RunningServer {
  TempDir tmp;
  asio::io_context ioc;
  std::unique_ptr<Session> session;
  std::unique_ptr<Server> server;
  std::thread thread;

  RunningServer() {
    session = std::make_unique<Session>(teleop_config(tmp.path()));
    ServerOptions opt;
    opt.data_dir = tmp.path();
    opt.scenario_dir = LANEPILOT_SCENARIO_DIR;
    server = std::make_unique<Server>(ioc, *session, tcp::endpoint(asio::ip::make_address("127.0.0.1"), 0), opt);
    server->start();
    thread = std::thread([this] { ioc.run(); });
  }
  ~RunningServer() {
    asio::post(ioc, [this] { server->stop(); });
    ioc.stop();
    thread.join();
  }

  http::response<http::string_body> request(http::verb verb, const std::string& target,
                                            const std::string& body = "") {
    asio::io_context client_ioc;
    beast::tcp_stream stream(client_ioc);
    stream.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), server->port()));
    http::request<http::string_body> req{verb, target, 11};
    req.set(http::field::host, "localhost");
    req.body() = body;
    req.prepare_payload();
    http::write(stream, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(stream, buf, res);
    beast::error_code ec;
    stream.socket().shutdown(tcp::socket::shutdown_both, ec);
    return res;
  }
};

}  // namespace

TEST(Server, HttpEndpoints) {
  RunningServer rs;
  auto res = rs.request(http::verb::get, "/api/status");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(json::parse(res.body()).at("mode"), "teleop_record");

  res = rs.request(http::verb::get, "/api/models");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_TRUE(json::parse(res.body()).at("models").empty());

  EXPECT_EQ(rs.request(http::verb::get, "/api/runs/run-0001/report").result(), http::status::not_found);
  EXPECT_EQ(rs.request(http::verb::get, "/nope").result(), http::status::not_found);
  EXPECT_EQ(rs.request(http::verb::post, "/api/status").result(), http::status::method_not_allowed);
  EXPECT_EQ(rs.request(http::verb::post, "/api/session", "{").result(), http::status::bad_request);
  EXPECT_EQ(rs.request(http::verb::post, "/api/session", R"({"mode":"bogus"})").result(),
            http::status::bad_request);
  EXPECT_EQ(rs.request(http::verb::post, "/api/session", R"({"mode":"autonomous_eval","model":"none"})").result(),
            http::status::not_found);

  save_tiny_model(rs.tmp.path(), "tiny");
  res = rs.request(http::verb::post, "/api/session", R"({"mode":"autonomous_eval","model":"tiny"})");
  ASSERT_EQ(res.result(), http::status::ok) << res.body();
  const auto status = json::parse(res.body());
  EXPECT_EQ(status.at("mode"), "autonomous_eval");
  res = rs.request(http::verb::get, "/api/runs/" + status.at("run_id").get<std::string>() + "/report");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_FALSE(json::parse(res.body()).at("final").get<bool>());
}

TEST(Server, WebSocketStreamsTelemetryAndFramesAndAcceptsControl) {
  RunningServer rs;
  asio::io_context client_ioc;
  websocket::stream<beast::tcp_stream> ws(client_ioc);
  beast::get_lowest_layer(ws).connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), rs.server->port()));
  ws.handshake("localhost", "/ws");

  bool saw_frame = false, saw_authority = false;
  std::optional<std::uint64_t> last_tick;
  bool sent = false, applied = false;
  for (int i = 0; i < 40 && !(saw_frame && applied); ++i) {
    beast::flat_buffer buf;
    ws.read(buf);
    const auto j = json::parse(beast::buffers_to_string(buf.data()));
    if (j.at("kind") == "frame") {
      saw_frame = true;
      const auto f = dataset::decode_pgm(base64_decode(j.at("data").get<std::string>()));
      EXPECT_EQ(f.height * f.width, f.pixels.size());
      continue;
    }
    ASSERT_EQ(j.at("kind"), "telemetry");
    const auto tick = j.at("tick").get<std::uint64_t>();
    if (last_tick) {
      EXPECT_GT(tick, *last_tick);
    }
    last_tick = tick;
    saw_authority = saw_authority || j.at("authority").get<bool>();
    if (!sent) {
      ws.write(asio::buffer(control(0.05, 0.2)));
      sent = true;
    } else if (j.at("command").at("target_speed").get<double>() == 0.2 * loop_scenario().cfg.vehicle.v_max) {
      applied = true;
    }
  }
  EXPECT_TRUE(saw_frame);
  EXPECT_TRUE(saw_authority);
  EXPECT_TRUE(applied);
  ws.close(websocket::close_code::normal);
}
