#pragma once

// HTTP + WebSocket front end for SessionManager (Boost.Beast, one thread per
// connection).
//
//   POST /sessions                      body: session config JSON (optional)
//   GET  /sessions/{id}/stimuli
//   POST /sessions/{id}/categorization  body: {"labels": [...]}
//   GET  /sessions/{id}/export          ?allow_incomplete=1 for early export
//   GET  /health
//   WS   /sessions/{id}/play            JSON WireMessages both ways
//
// Opening the play socket resumes a paused session and re-sends whatever the
// session is waiting for.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "mhng/session.hpp"

namespace mhng::service {

struct ServerConfig {
  std::string bind_address = "0.0.0.0";
  std::uint16_t port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir = "mhng-data";
  std::chrono::milliseconds timeout_sweep_interval{1000};

  /// Overrides from MHNG_BIND, MHNG_PORT and MHNG_DATA_DIR when set.
  static ServerConfig from_env(ServerConfig defaults);
  static ServerConfig from_env() { return from_env(ServerConfig()); }
};

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

/// Routes one plain HTTP request; exposed so routing is testable without
/// sockets. `target` may carry a query string.
HttpResponse route_http(SessionManager& manager, const std::string& method, const std::string& target,
                        const std::string& body);

class Server {
 public:
  explicit Server(ServerConfig config, SessionManager::ClockFn clock = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds, restores journaled sessions and starts serving in background
  /// threads. Returns the bound port.
  std::uint16_t start();
  void stop();
  /// start() and block until stop() is called from another thread.
  void run();

  SessionManager& manager();
  std::uint16_t port() const { return port_; }

 private:
  struct Impl;
  ServerConfig config_;
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
};

}  // namespace mhng::service
