#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "teach/serve.hpp"

namespace teach {

// HTTP + WebSocket front end for a SessionManager, one port.
//
// HTTP (JSON bodies):
//   GET  /health
//   POST /sessions                 {username, env, setting, seed} -> {session_id, round}
//   GET  /sessions/<id>            session info
//   POST /sessions/<id>/survey     {ratings, text}
//   POST /sessions/<id>/finalize   -> {log}
// WebSocket at /sessions/<id>/ws:
//   client: {type: action, values}, {type: pen_up}
//   server: {type: round, spec}, {type: state, state, reward_display, steps_left},
//           {type: score, value, reward, reason}, {type: phase, phase}, {type: error, message}
// Every message carries `protocol`. The client clocks interactive rounds: one
// action message is one tick. Demo rounds are pushed by the server, paced at
// tick_hz when `realtime` is set and back to back otherwise.
struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks a free port
  bool realtime = false;
  double tick_hz = 10.0;
};

class Server {
 public:
  Server(SessionManager& sessions, ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts accepting on a background thread; returns the bound port.
  std::uint16_t start();
  void stop();
  // Blocks until stop() is called from another thread.
  void wait();
  std::uint16_t port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
};

// Minimal synchronous client used by tests and the headless driver.
struct HttpResponse {
  int status = 0;
  Json body;
};
HttpResponse http_request(const std::string& host, std::uint16_t port, const std::string& method,
                          const std::string& target, const Json& body = nullptr);

class WsClient {
 public:
  WsClient(const std::string& host, std::uint16_t port, const std::string& target);
  ~WsClient();
  void send(const Json& message);
  Json receive();
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct HeadlessSummary {
  std::string session_id;
  std::filesystem::path log;
  int rounds = 0;
  std::vector<std::string> phases;  // phases in the order they were entered
};

// Plays a whole session over the wire: pretest and evaluation rounds with the
// given policy, practice rounds by tracing the overlay, then survey and finalize.
HeadlessSummary run_headless_client(const std::string& host, std::uint16_t port, const std::string& username,
                                    Schema env, Setting setting, std::uint64_t seed);

}  // namespace teach
