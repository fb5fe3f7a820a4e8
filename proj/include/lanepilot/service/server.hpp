#pragma once

// HTTP + WebSocket front end for a Session. Everything runs on one
// io_context thread: socket handlers only queue client messages, and the
// tick timer on the same thread is the single mutator of the simulation.

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "lanepilot/service/session.hpp"
#include "lanepilot/sim/scenario.hpp"

namespace lanepilot::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

struct ServerOptions {
  fs::path data_dir;
  fs::path scenario_dir;       // bare scenario names in POST /api/session resolve here
  bool real_time = true;       // pace ticks at the wall clock
  std::size_t max_queued_frames = 2;
  std::size_t max_queued_messages = 512;  // beyond this a client is considered dead
};

class Server;

namespace detail {

class WsClient : public std::enable_shared_from_this<WsClient> {
 public:
  WsClient(tcp::socket&& socket, Server& server) : ws_(std::move(socket)), server_(server) {}

  void run(http::request<http::string_body> req);
  void send(std::shared_ptr<const std::string> text, bool droppable);
  std::uint64_t id() const { return id_; }
  std::size_t dropped_frames() const { return dropped_; }

 private:
  struct Pending {
    std::shared_ptr<const std::string> text;
    bool droppable;
  };

  void read();
  void write_next();
  void shutdown();

  websocket::stream<beast::tcp_stream> ws_;
  Server& server_;
  std::uint64_t id_ = 0;
  beast::flat_buffer buffer_;
  std::deque<Pending> queue_;
  std::size_t queued_frames_ = 0;
  std::size_t dropped_ = 0;
  bool writing_ = false;
  bool closed_ = false;
};

class HttpClient : public std::enable_shared_from_this<HttpClient> {
 public:
  HttpClient(tcp::socket&& socket, Server& server) : stream_(std::move(socket)), server_(server) {}
  void run() { read(); }

 private:
  void read();
  void respond(http::response<http::string_body> res, bool keep_alive);

  beast::tcp_stream stream_;
  Server& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace detail

class Server {
 public:
  Server(asio::io_context& ioc, Session& session, const tcp::endpoint& endpoint, ServerOptions opt)
      : ioc_(ioc), session_(session), opt_(std::move(opt)), acceptor_(ioc), timer_(ioc) {
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(endpoint);  // throws if the port is busy
    acceptor_.listen(asio::socket_base::max_listen_connections);
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }
  Session& session() { return session_; }
  const ServerOptions& options() const { return opt_; }

  void start() {
    accept();
    next_tick_ = std::chrono::steady_clock::now();
    schedule_tick();
  }

  void stop() {
    stopping_ = true;
    beast::error_code ec;
    acceptor_.close(ec);
    timer_.cancel();
  }

  // Runs one tick immediately and fans the output out (used when not pacing).
  void tick_once() {
    auto out = session_.tick();
    if (!out) return;
    for (auto& [client, text] : out->errors) {
      if (auto c = find(client)) c->send(std::make_shared<const std::string>(std::move(text)), false);
    }
    if (out->telemetry.is_null()) return;
    const auto authority = session_.authority();
    auto frame = std::make_shared<const std::string>(std::move(out->frame));
    for (auto& [id, weak] : clients_) {
      auto c = weak.lock();
      if (!c) continue;
      c->send(std::make_shared<const std::string>(telemetry_for(out->telemetry, authority == id)), false);
      c->send(frame, true);
    }
  }

  // --- used by the connection objects ----------------------------------------

  void register_client(std::uint64_t id, const std::shared_ptr<detail::WsClient>& c) { clients_[id] = c; }
  void unregister_client(std::uint64_t id) {
    clients_.erase(id);
    session_.disconnect(id);
  }

  http::response<http::string_body> handle(const http::request<http::string_body>& req) {
    const std::string target(req.target());
    const auto path = target.substr(0, target.find('?'));
    if (req.method() == http::verb::options) return reply(req, http::status::no_content, nullptr);
    try {
      if (path == "/api/status") {
        if (req.method() != http::verb::get) return method_not_allowed(req);
        return reply(req, http::status::ok, session_.status());
      }
      if (path == "/api/models") {
        if (req.method() != http::verb::get) return method_not_allowed(req);
        return reply(req, http::status::ok, {{"models", list_models(opt_.data_dir)}});
      }
      if (path == "/api/session") {
        if (req.method() != http::verb::post) return method_not_allowed(req);
        return post_session(req);
      }
      const std::string runs = "/api/runs/", suffix = "/report";
      if (path.starts_with(runs) && path.ends_with(suffix) && path.size() > runs.size() + suffix.size()) {
        if (req.method() != http::verb::get) return method_not_allowed(req);
        const auto id = path.substr(runs.size(), path.size() - runs.size() - suffix.size());
        if (auto rep = session_.report(id)) return reply(req, http::status::ok, *rep);
        return reply(req, http::status::not_found, {{"error", "no run '" + id + "'"}});
      }
      return reply(req, http::status::not_found, {{"error", "no such endpoint: " + path}});
    } catch (const std::exception& e) {
      return reply(req, http::status::internal_server_error, {{"error", e.what()}});
    }
  }

 private:
  static http::response<http::string_body> reply(const http::request<http::string_body>& req, http::status status,
                                                 const nlohmann::json& body) {
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::server, "lanepilot");
    res.set(http::field::access_control_allow_origin, "*");
    res.set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
    res.set(http::field::access_control_allow_headers, "Content-Type");
    if (!body.is_null()) {
      res.set(http::field::content_type, "application/json");
      res.body() = body.dump();
    }
    res.keep_alive(req.keep_alive());
    res.prepare_payload();
    return res;
  }

  static http::response<http::string_body> method_not_allowed(const http::request<http::string_body>& req) {
    return reply(req, http::status::method_not_allowed, {{"error", "method not allowed"}});
  }

  // Body: {"mode": "teleop_record" | "autonomous_eval", "model": name?, "scenario": name?}
  http::response<http::string_body> post_session(const http::request<http::string_body>& req) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body());
    } catch (const nlohmann::json::exception&) {
      return reply(req, http::status::bad_request, {{"error", "body must be JSON"}});
    }
    try {
      if (!body.is_object() || !body.contains("mode") || !body.at("mode").is_string()) {
        throw ConfigError("body needs a string 'mode'");
      }
      const auto mode = session_mode_from_string(body.at("mode").get<std::string>());
      std::optional<fs::path> model;
      if (body.contains("model")) {
        try {
          model = resolve_model(opt_.data_dir, body.at("model").get<std::string>());
        } catch (const ConfigError& e) {
          return reply(req, http::status::not_found, {{"error", e.what()}});
        }
      }
      std::optional<sim::Scenario> scenario;
      if (body.contains("scenario")) {
        fs::path p = body.at("scenario").get<std::string>();
        if (!fs::exists(p)) p = opt_.scenario_dir / (p.string() + ".json");
        if (!fs::exists(p)) return reply(req, http::status::not_found, {{"error", "scenario not found"}});
        scenario = sim::load_scenario(p);
      }
      if (mode == SessionMode::AutonomousEval && !model && !session_.config().model) {
        throw ConfigError("autonomous_eval needs a model");
      }
      session_.reconfigure(mode, model, scenario);
      return reply(req, http::status::ok, session_.status());
    } catch (const nlohmann::json::exception& e) {
      return reply(req, http::status::bad_request, {{"error", e.what()}});
    } catch (const Error& e) {
      return reply(req, http::status::bad_request, {{"error", e.what()}});
    }
  }

  std::shared_ptr<detail::WsClient> find(std::uint64_t id) {
    const auto it = clients_.find(id);
    return it == clients_.end() ? nullptr : it->second.lock();
  }

  void accept() {
    acceptor_.async_accept(asio::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (!stopping_) accept();
        return;
      }
      std::make_shared<detail::HttpClient>(std::move(socket), *this)->run();
      accept();
    });
  }

  void schedule_tick() {
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(session_.episode() ? session_.episode()->world().cfg.tick_period() : 0.1));
    next_tick_ += opt_.real_time ? period : std::chrono::steady_clock::duration::zero();
    timer_.expires_at(next_tick_);
    timer_.async_wait([this](beast::error_code ec) {
      if (ec || stopping_) return;
      tick_once();
      // After a long stall, resume pacing from now rather than bursting.
      if (std::chrono::steady_clock::now() - next_tick_ > std::chrono::seconds(1)) {
        next_tick_ = std::chrono::steady_clock::now();
      }
      schedule_tick();
    });
  }

  asio::io_context& ioc_;
  Session& session_;
  ServerOptions opt_;
  tcp::acceptor acceptor_;
  asio::steady_timer timer_;
  std::chrono::steady_clock::time_point next_tick_;
  std::map<std::uint64_t, std::weak_ptr<detail::WsClient>> clients_;
  bool stopping_ = false;
};

namespace detail {

inline void HttpClient::read() {
  req_ = {};
  stream_.expires_after(std::chrono::seconds(30));
  http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    if (websocket::is_upgrade(self->req_)) {
      const std::string target(self->req_.target());
      if (target.substr(0, target.find('?')) == "/ws") {
        self->stream_.expires_never();
        std::make_shared<WsClient>(self->stream_.release_socket(), self->server_)->run(std::move(self->req_));
        return;
      }
    }
    auto res = self->server_.handle(self->req_);
    const bool keep = res.keep_alive();
    self->respond(std::move(res), keep);
  });
}

inline void HttpClient::respond(http::response<http::string_body> res, bool keep_alive) {
  auto sp = std::make_shared<http::response<http::string_body>>(std::move(res));
  http::async_write(stream_, *sp, [self = shared_from_this(), sp, keep_alive](beast::error_code ec, std::size_t) {
    if (ec || !keep_alive) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    self->read();
  });
}

inline void WsClient::run(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.text(true);
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->id_ = self->server_.session().connect();
    self->server_.register_client(self->id_, self);
    self->read();
  });
}

inline void WsClient::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->shutdown();
      return;
    }
    self->server_.session().post(self->id_, beast::buffers_to_string(self->buffer_.data()));
    self->buffer_.consume(self->buffer_.size());
    self->read();
  });
}

// Frames are dropped when the client is behind; telemetry and errors are
// always queued.
inline void WsClient::send(std::shared_ptr<const std::string> text, bool droppable) {
  if (closed_) return;
  if (droppable && queued_frames_ >= server_.options().max_queued_frames) {
    ++dropped_;
    return;
  }
  if (queue_.size() >= server_.options().max_queued_messages) {
    shutdown();
    return;
  }
  queue_.push_back({std::move(text), droppable});
  if (droppable) ++queued_frames_;
  if (!writing_) write_next();
}

inline void WsClient::write_next() {
  if (queue_.empty() || closed_) {
    writing_ = false;
    return;
  }
  writing_ = true;
  ws_.async_write(asio::buffer(*queue_.front().text), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (self->queue_.front().droppable) --self->queued_frames_;
    self->queue_.pop_front();
    if (ec) {
      self->shutdown();
      return;
    }
    self->write_next();
  });
}

inline void WsClient::shutdown() {
  if (closed_) return;
  closed_ = true;
  if (id_ != 0) server_.unregister_client(id_);
  beast::error_code ignored;
  beast::get_lowest_layer(ws_).socket().close(ignored);
}

}  // namespace detail

}  // namespace lanepilot::service
