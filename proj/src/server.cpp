#include "teach/server.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <condition_variable>
#include <regex>

namespace teach {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

Json with_protocol(Json j) {
  j["protocol"] = kProtocolVersion;
  return j;
}

Json error_json(const std::string& message) { return with_protocol(Json{{"type", "error"}, {"message", message}}); }

Json info_json(const SessionInfo& s) {
  return Json{{"session_id", s.id},
              {"username", s.username},
              {"env", std::string(to_string(s.schema))},
              {"setting", std::string(to_string(s.setting))},
              {"seed", s.seed},
              {"phase", std::string(to_string(s.phase))},
              {"round", s.round},
              {"rounds", s.rounds},
              {"finalized", s.finalized}};
}

Json round_message(const Round& r) { return with_protocol(Json{{"type", "round"}, {"spec", round_to_json(r)}}); }

// Messages for one StepResult, in the order the client should see them.
std::vector<Json> step_messages(const StepResult& r) {
  std::vector<Json> out;
  out.push_back(with_protocol(Json{{"type", "state"},
                                   {"state", r.state},
                                   {"reward_display", r.reward_display},
                                   {"steps_left", r.steps_left},
                                   {"round_over", r.ended.has_value()}}));
  if (r.ended) {
    out.push_back(with_protocol(Json{{"type", "score"},
                                     {"round", r.ended->round},
                                     {"value", r.ended->score},
                                     {"reward", r.ended->reward},
                                     {"reason", r.ended->reason}}));
    if (r.next) out.push_back(round_message(*r.next));
    else out.push_back(with_protocol(Json{{"type", "phase"}, {"phase", std::string(to_string(r.phase))}}));
  }
  return out;
}

}  // namespace

struct Server::Impl {
  SessionManager& sessions;
  ServerConfig config;
  asio::io_context io;
  tcp::acceptor acceptor{io};
  std::thread accept_thread;
  std::mutex mutex;
  std::condition_variable stopped_cv;
  bool stopped = false;
  std::list<std::shared_ptr<tcp::socket>> sockets;
  std::list<std::thread> workers;

  Impl(SessionManager& s, ServerConfig c) : sessions(s), config(std::move(c)) {}

  void accept_loop() {
    for (;;) {
      auto socket = std::make_shared<tcp::socket>(io);
      beast::error_code ec;
      acceptor.accept(*socket, ec);
      std::lock_guard lock(mutex);
      if (stopped) return;
      if (ec) continue;
      socket->set_option(tcp::no_delay(true), ec);
      sockets.push_back(socket);
      workers.emplace_back([this, socket] { serve_connection(*socket); });
    }
  }

  http::response<http::string_body> reply(const http::request<http::string_body>& req, http::status status,
                                          const Json& body) {
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::content_type, "application/json");
    res.keep_alive(req.keep_alive());
    res.body() = with_protocol(body).dump();
    res.prepare_payload();
    return res;
  }

  http::response<http::string_body> handle(const http::request<http::string_body>& req) {
    static const std::regex session_re("^/sessions/([A-Za-z0-9_-]+)(/survey|/finalize)?$");
    const std::string target(req.target());
    try {
      Json body = req.body().empty() ? Json::object() : Json::parse(req.body());
      if (target == "/health" && req.method() == http::verb::get) return reply(req, http::status::ok, {{"ok", true}});
      if (target == "/sessions" && req.method() == http::verb::post) {
        const auto created = sessions.create_session(
            require_field(body, "username").get<std::string>(),
            schema_from_string(require_field(body, "env").get<std::string>()),
            setting_from_string(require_field(body, "setting").get<std::string>()), body.value("seed", 0ULL));
        return reply(req, http::status::created,
                     {{"session_id", created.session_id}, {"round", round_to_json(created.round)}});
      }
      std::smatch m;
      if (std::regex_match(target, m, session_re)) {
        const std::string id = m[1];
        const std::string action = m[2];
        if (!sessions.has_session(id)) return reply(req, http::status::not_found, {{"error", "unknown session"}});
        if (action.empty() && req.method() == http::verb::get) {
          return reply(req, http::status::ok, info_json(sessions.info(id)));
        }
        if (action == "/survey" && req.method() == http::verb::post) {
          sessions.submit_survey(id, require_field(body, "ratings").get<std::vector<int>>(), body.value("text", ""));
          return reply(req, http::status::ok, {{"ok", true}});
        }
        if (action == "/finalize" && req.method() == http::verb::post) {
          const auto log = sessions.finalize_session(id);
          return reply(req, http::status::ok, {{"log", log.string()}});
        }
      }
      return reply(req, http::status::not_found, {{"error", "no route for " + target}});
    } catch (const SessionError& e) {
      return reply(req, http::status::conflict, {{"error", e.what()}});
    } catch (const std::exception& e) {
      return reply(req, http::status::bad_request, {{"error", e.what()}});
    }
  }

  void serve_connection(tcp::socket& socket) {
    beast::error_code ec;
    beast::flat_buffer buffer;
    for (;;) {
      http::request<http::string_body> req;
      http::read(socket, buffer, req, ec);
      if (ec) break;
      if (websocket::is_upgrade(req)) {
        serve_websocket(socket, req);
        break;
      }
      auto res = handle(req);
      http::write(socket, res, ec);
      if (ec || !req.keep_alive()) break;
    }
    socket.shutdown(tcp::socket::shutdown_both, ec);
  }

  // Pushes demo frames until the session leaves the demo phase.
  void play_demo(websocket::stream<tcp::socket&>& ws, const std::string& id) {
    const auto period = std::chrono::duration<double>(1.0 / config.tick_hz);
    while (sessions.info(id).phase == Phase::demo) {
      if (config.realtime) std::this_thread::sleep_for(period);
      for (const auto& msg : step_messages(sessions.advance_demo(id))) ws.write(asio::buffer(msg.dump()));
    }
  }

  void serve_websocket(tcp::socket& socket, const http::request<http::string_body>& req) {
    static const std::regex ws_re("^/sessions/([A-Za-z0-9_-]+)/ws$");
    websocket::stream<tcp::socket&> ws(socket);
    beast::error_code ec;
    ws.accept(req, ec);
    if (ec) return;
    ws.text(true);
    const std::string target(req.target());
    std::smatch m;
    auto send = [&](const Json& j) { ws.write(asio::buffer(j.dump())); };
    try {
      if (!std::regex_match(target, m, ws_re) || !sessions.has_session(m[1])) {
        send(error_json("unknown session"));
        ws.close(websocket::close_code::policy_error);
        return;
      }
      const std::string id = m[1];
      const SessionInfo info = sessions.info(id);
      if (info.phase == Phase::survey || info.phase == Phase::done) {
        send(with_protocol(Json{{"type", "phase"}, {"phase", std::string(to_string(info.phase))}}));
      } else {
        send(round_message(sessions.current_round(id)));
        play_demo(ws, id);
      }
      for (;;) {
        beast::flat_buffer buf;
        ws.read(buf);
        Json msg;
        try {
          msg = Json::parse(beast::buffers_to_string(buf.data()));
        } catch (const Json::parse_error&) {
          send(error_json("message is not JSON"));
          continue;
        }
        try {
          if (msg.value("protocol", kProtocolVersion) != kProtocolVersion) {
            send(error_json("unsupported protocol version"));
            continue;
          }
          const std::string type = msg.value("type", "");
          StepResult res;
          if (type == "action") {
            std::vector<double> values;
            const auto it = msg.find("values");
            if (it == msg.end() || !it->is_array()) throw SessionError("action needs a values array");
            for (const auto& v : *it) values.push_back(v.is_number() ? v.get<double>() : std::nan(""));
            res = sessions.step(id, values);
          } else if (type == "pen_up") {
            res = sessions.pen_up(id);
          } else {
            send(error_json("unknown message type '" + type + "'"));
            continue;
          }
          for (const auto& out : step_messages(res)) send(out);
          play_demo(ws, id);
        } catch (const Error& e) {
          send(error_json(e.what()));
        }
      }
    } catch (const beast::system_error&) {
      // peer closed or the server is stopping
    }
  }
};

Server::Server(SessionManager& sessions, ServerConfig config)
    : impl_(std::make_unique<Impl>(sessions, std::move(config))) {}

Server::~Server() { stop(); }

std::uint16_t Server::start() {
  const tcp::endpoint ep(asio::ip::make_address(impl_->config.host), impl_->config.port);
  impl_->acceptor.open(ep.protocol());
  impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
  impl_->acceptor.bind(ep);
  impl_->acceptor.listen();
  port_ = impl_->acceptor.local_endpoint().port();
  impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
  return port_;
}

void Server::stop() {
  if (!impl_->accept_thread.joinable()) return;
  {
    std::lock_guard lock(impl_->mutex);
    impl_->stopped = true;
    beast::error_code ec;
    impl_->acceptor.cancel(ec);
    impl_->acceptor.close(ec);
    for (auto& s : impl_->sockets) {
      s->shutdown(tcp::socket::shutdown_both, ec);
      s->close(ec);
    }
  }
  // Wake a blocking accept() on platforms where close() does not.
  try {
    asio::io_context io;
    tcp::socket poke(io);
    beast::error_code ec;
    poke.connect(tcp::endpoint(asio::ip::make_address(impl_->config.host), port_), ec);
  } catch (...) {
  }
  impl_->accept_thread.join();
  for (auto& w : impl_->workers) w.join();
  impl_->workers.clear();
  impl_->sockets.clear();
  impl_->stopped_cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->mutex);
  impl_->stopped_cv.wait(lock, [this] { return impl_->stopped; });
}

// ---------------------------------------------------------------------------
// Client side
// ---------------------------------------------------------------------------

HttpResponse http_request(const std::string& host, std::uint16_t port, const std::string& method,
                          const std::string& target, const Json& body) {
  asio::io_context io;
  tcp::resolver resolver(io);
  tcp::socket socket(io);
  asio::connect(socket, resolver.resolve(host, std::to_string(port)));
  http::request<http::string_body> req{http::string_to_verb(method), target, 11};
  req.set(http::field::host, host);
  req.set(http::field::content_type, "application/json");
  if (!body.is_null()) req.body() = body.dump();
  req.prepare_payload();
  http::write(socket, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(socket, buffer, res);
  beast::error_code ec;
  socket.shutdown(tcp::socket::shutdown_both, ec);
  HttpResponse out;
  out.status = static_cast<int>(res.result_int());
  out.body = res.body().empty() ? Json(nullptr) : Json::parse(res.body());
  return out;
}

struct WsClient::Impl {
  asio::io_context io;
  websocket::stream<tcp::socket> ws{io};
};

WsClient::WsClient(const std::string& host, std::uint16_t port, const std::string& target)
    : impl_(std::make_unique<Impl>()) {
  tcp::resolver resolver(impl_->io);
  asio::connect(impl_->ws.next_layer(), resolver.resolve(host, std::to_string(port)));
  impl_->ws.next_layer().set_option(tcp::no_delay(true));
  impl_->ws.handshake(host + ":" + std::to_string(port), target);
  impl_->ws.text(true);
}

WsClient::~WsClient() {
  try {
    close();
  } catch (...) {
  }
}

void WsClient::send(const Json& message) { impl_->ws.write(asio::buffer(message.dump())); }

Json WsClient::receive() {
  beast::flat_buffer buf;
  impl_->ws.read(buf);
  return Json::parse(beast::buffers_to_string(buf.data()));
}

void WsClient::close() {
  if (impl_->ws.is_open()) impl_->ws.close(websocket::close_code::normal);
}

namespace {

// Writing: trace the round's gold path, a few samples per pixel skipped.
std::vector<ActionVector> writing_actions(const Round& r) {
  const auto& gold = r.scenario.writing_target().gold;
  std::vector<ActionVector> out;
  StateVector at = r.scenario.initial_state;
  for (std::size_t i = 4; i < gold.size(); i += 4) {
    out.push_back({gold[i][0] - at[0], gold[i][1] - at[1]});
    at = gold[i];
  }
  if (static_cast<int>(out.size()) > r.time_limit) out.resize(static_cast<std::size_t>(r.time_limit));
  return out;
}

}  // namespace

HeadlessSummary run_headless_client(const std::string& host, std::uint16_t port, const std::string& username,
                                    Schema env, Setting setting, std::uint64_t seed) {
  const auto created = http_request(host, port, "POST", "/sessions",
                                    Json{{"username", username},
                                         {"env", std::string(to_string(env))},
                                         {"setting", std::string(to_string(setting))},
                                         {"seed", seed}});
  if (created.status != 201) throw Error("create failed: " + created.body.dump());
  HeadlessSummary out;
  out.session_id = created.body.at("session_id").get<std::string>();
  const ScriptedParkingExpert expert;
  WsClient ws(host, port, "/sessions/" + out.session_id + "/ws");

  auto note_phase = [&](const std::string& p) {
    if (out.phases.empty() || out.phases.back() != p) out.phases.push_back(p);
  };
  auto next = [&] {
    Json m = ws.receive();
    if (m.at("protocol").get<int>() != kProtocolVersion) throw Error("protocol mismatch");
    if (m.at("type") == "error") throw Error("server error: " + m.at("message").get<std::string>());
    return m;
  };
  auto expect = [&](const char* type) {
    Json m = next();
    if (m.at("type") != type) throw Error(std::string("expected ") + type + ", got " + m.dump());
    return m;
  };

  Json msg = expect("round");
  while (msg.at("type") == "round") {
    const Json& spec = msg.at("spec");
    note_phase(spec.at("phase").get<std::string>());
    ++out.rounds;
    Round r;
    r.phase = phase_from_string(spec.at("phase").get<std::string>());
    r.time_limit = spec.at("time_limit").get<int>();
    r.scenario = scenario_from_json(spec.at("scenario"));
    bool over = false;
    if (r.phase == Phase::demo) {
      // Frames are pushed until the round ends.
      while (!over) over = expect("state").at("round_over").get<bool>();
    } else if (env == Schema::writing2) {
      for (const auto& a : writing_actions(r)) {
        ws.send(with_protocol(Json{{"type", "action"}, {"values", a}}));
        over = expect("state").at("round_over").get<bool>();
        if (over) break;
      }
      if (!over) {
        ws.send(with_protocol(Json{{"type", "pen_up"}}));
        expect("state");
      }
    } else {
      StateVector state = r.scenario.initial_state;
      while (!over) {
        ActionVector a = expert.act(r.scenario, state);
        for (double& v : a) v = std::clamp(v, -1.0, 1.0);
        ws.send(with_protocol(Json{{"type", "action"}, {"values", a}}));
        const Json reply = expect("state");
        state = reply.at("state").get<StateVector>();
        over = reply.at("round_over").get<bool>();
      }
    }
    expect("score");
    msg = next();
  }
  note_phase(msg.at("phase").get<std::string>());
  ws.close();

  const auto survey = http_request(host, port, "POST", "/sessions/" + out.session_id + "/survey",
                                   Json{{"ratings", {5, 6, 4}}, {"text", "headless run"}});
  if (survey.status != 200) throw Error("survey failed: " + survey.body.dump());
  const auto fin = http_request(host, port, "POST", "/sessions/" + out.session_id + "/finalize");
  if (fin.status != 200) throw Error("finalize failed: " + fin.body.dump());
  out.log = fin.body.at("log").get<std::string>();
  note_phase("done");
  return out;
}

}  // namespace teach
