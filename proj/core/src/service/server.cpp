#include "mhng/service/server.hpp"

#include <sys/socket.h>

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#ifndef MHNG_VERSION
#define MHNG_VERSION "0.0.0"
#endif

namespace mhng::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start < path.size()) {
    const std::size_t slash = path.find('/', start);
    const std::size_t end = slash == std::string::npos ? path.size() : slash;
    if (end > start) parts.push_back(path.substr(start, end - start));
    start = end + 1;
  }
  return parts;
}

bool query_flag(const std::string& query, const std::string& key) {
  std::size_t start = 0;
  while (start <= query.size()) {
    const std::size_t amp = query.find('&', start);
    const std::string item = query.substr(start, amp == std::string::npos ? std::string::npos : amp - start);
    const std::size_t eq = item.find('=');
    const std::string k = item.substr(0, eq);
    const std::string v = eq == std::string::npos ? "1" : item.substr(eq + 1);
    if (k == key) return v == "1" || v == "true" || v == "yes";
    if (amp == std::string::npos) break;
    start = amp + 1;
  }
  return false;
}

HttpResponse json_response(int status, const json& body) { return {status, body.dump()}; }

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}, {"status", status}});
}

json messages_json(const std::vector<WireMessage>& messages) {
  json out = json::array();
  for (const auto& m : messages) out.push_back(m);
  return out;
}

// Matches /sessions/{id}/play.
std::optional<std::string> play_session_id(const std::string& target) {
  const auto parts = split_path(target.substr(0, target.find('?')));
  if (parts.size() == 3 && parts[0] == "sessions" && parts[2] == "play") return parts[1];
  return std::nullopt;
}

void shutdown_fd(int fd) { ::shutdown(fd, SHUT_RDWR); }

}  // namespace

ServerConfig ServerConfig::from_env(ServerConfig defaults) {
  if (const char* v = std::getenv("MHNG_BIND"); v && *v) defaults.bind_address = v;
  if (const char* v = std::getenv("MHNG_PORT"); v && *v) {
    const long port = std::strtol(v, nullptr, 10);
    if (port < 0 || port > 65535) throw ConfigError("MHNG_PORT out of range");
    defaults.port = static_cast<std::uint16_t>(port);
  }
  if (const char* v = std::getenv("MHNG_DATA_DIR"); v && *v) defaults.data_dir = v;
  return defaults;
}

HttpResponse route_http(SessionManager& manager, const std::string& method, const std::string& target,
                        const std::string& body) {
  const std::size_t q = target.find('?');
  const std::string path = target.substr(0, q);
  const std::string query = q == std::string::npos ? "" : target.substr(q + 1);
  const auto parts = split_path(path);
  try {
    if (parts.size() == 1 && parts[0] == "health" && method == "GET") {
      return json_response(200, {{"status", "ok"}, {"version", MHNG_VERSION}, {"sessions", manager.ids().size()}});
    }
    if (parts.empty() || parts[0] != "sessions") return error_response(404, "not found");
    if (parts.size() == 1) {
      if (method != "POST") return error_response(405, "use POST to create a session");
      SessionConfig config;
      if (!body.empty()) config = json::parse(body).get<SessionConfig>();
      const auto created = manager.create(config);
      return json_response(201, {{"session_id", created.session_id}, {"messages", messages_json(created.messages)}});
    }
    if (parts.size() != 3) return error_response(404, "not found");
    const std::string& id = parts[1];
    const std::string& leaf = parts[2];
    if (leaf == "stimuli") {
      if (method != "GET") return error_response(405, "use GET");
      return json_response(200, manager.with_session(id, [](Session& s) { return s.stimuli_payload(); }));
    }
    if (leaf == "categorization") {
      if (method != "POST") return error_response(405, "use POST");
      const json j = json::parse(body);
      if (!j.contains("labels")) return error_response(400, "body needs 'labels'");
      const auto messages = manager.submit_initial_categorization(id, j.at("labels").get<Labels>());
      return json_response(200, {{"messages", messages_json(messages)}});
    }
    if (leaf == "export") {
      if (method != "GET") return error_response(405, "use GET");
      return json_response(200, manager.export_session(id, query_flag(query, "allow_incomplete")));
    }
    if (leaf == "play") return error_response(426, "WebSocket upgrade required");
    return error_response(404, "not found");
  } catch (const NotFound& e) {
    return error_response(404, e.what());
  } catch (const ProtocolError& e) {
    return error_response(409, e.what());
  } catch (const ConfigError& e) {
    return error_response(400, e.what());
  } catch (const ShapeError& e) {
    return error_response(400, e.what());
  } catch (const json::exception& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

// ---------------------------------------------------------------------------

struct Server::Impl {
  explicit Impl(const ServerConfig& config, SessionManager::ClockFn clock)
      : manager(config.data_dir, std::move(clock)) {}

  SessionManager manager;
  asio::io_context io;
  std::unique_ptr<tcp::acceptor> acceptor;
  std::thread accept_thread;
  std::thread sweep_thread;
  std::mutex mutex;
  std::condition_variable wake;
  bool stopping = false;
  bool running = false;
  std::vector<std::thread> connections;
  std::set<int> open_fds;

  void track(int fd, bool add) {
    std::lock_guard lock(mutex);
    if (add) open_fds.insert(fd);
    else open_fds.erase(fd);
  }

  void serve_websocket(tcp::socket& socket, http::request<http::string_body>& req, const std::string& id) {
    websocket::stream<tcp::socket&> ws(socket);
    ws.accept(req);
    ws.text(true);
    auto send = [&](const std::vector<WireMessage>& messages) {
      for (const auto& m : messages) ws.write(asio::buffer(json(m).dump()));
    };
    send(manager.resume(id));
    beast::flat_buffer buffer;
    for (;;) {
      buffer.clear();
      beast::error_code ec;
      ws.read(buffer, ec);
      if (ec) return;
      WireMessage message;
      try {
        message = json::parse(beast::buffers_to_string(buffer.data())).get<WireMessage>();
      } catch (const std::exception& e) {
        send({WireMessage{"error", {{"code", "malformed"}, {"message", e.what()}}, 0}});
        continue;
      }
      try {
        send(manager.handle(id, message));
      } catch (const NotFound&) {
        ws.close(websocket::close_code::policy_error);
        return;
      }
    }
  }

  void serve(tcp::socket socket) {
    const int fd = socket.native_handle();
    track(fd, true);
    beast::error_code ec;
    try {
      beast::flat_buffer buffer;
      for (;;) {
        http::request<http::string_body> req;
        http::read(socket, buffer, req, ec);
        if (ec) break;
        if (websocket::is_upgrade(req)) {
          const auto id = play_session_id(std::string(req.target()));
          if (id && manager.exists(*id)) {
            serve_websocket(socket, req, *id);
            break;
          }
          http::response<http::string_body> res{http::status::not_found, req.version()};
          res.set(http::field::content_type, "application/json");
          res.body() = R"({"error":"no such session","status":404})";
          res.prepare_payload();
          http::write(socket, res, ec);
          break;
        }
        const HttpResponse out =
            route_http(manager, std::string(req.method_string()), std::string(req.target()), req.body());
        http::response<http::string_body> res{static_cast<http::status>(out.status), req.version()};
        res.set(http::field::server, "mhng/" MHNG_VERSION);
        res.set(http::field::content_type, "application/json");
        res.keep_alive(req.keep_alive());
        res.body() = out.body;
        res.prepare_payload();
        http::write(socket, res, ec);
        if (ec || !req.keep_alive()) break;
      }
    } catch (const std::exception&) {
      // Connection-level failure; the session state is unaffected.
    }
    socket.shutdown(tcp::socket::shutdown_both, ec);
    track(fd, false);
    socket.close(ec);
  }
};

Server::Server(ServerConfig config, SessionManager::ClockFn clock)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(config_, std::move(clock))) {}

Server::~Server() { stop(); }

SessionManager& Server::manager() { return impl_->manager; }

std::uint16_t Server::start() {
  Impl& im = *impl_;
  if (im.running) return port_;
  im.manager.restore();
  const tcp::endpoint endpoint(asio::ip::make_address(config_.bind_address), config_.port);
  im.acceptor = std::make_unique<tcp::acceptor>(im.io);
  im.acceptor->open(endpoint.protocol());
  im.acceptor->set_option(asio::socket_base::reuse_address(true));
  im.acceptor->bind(endpoint);
  im.acceptor->listen();
  port_ = im.acceptor->local_endpoint().port();
  im.running = true;
  im.stopping = false;

  im.accept_thread = std::thread([&im] {
    for (;;) {
      beast::error_code ec;
      tcp::socket socket(im.io);
      im.acceptor->accept(socket, ec);
      std::lock_guard lock(im.mutex);
      if (im.stopping) return;
      if (ec) continue;
      im.connections.emplace_back([&im, s = std::move(socket)]() mutable { im.serve(std::move(s)); });
    }
  });
  im.sweep_thread = std::thread([&im, interval = config_.timeout_sweep_interval] {
    std::unique_lock lock(im.mutex);
    while (!im.stopping) {
      im.wake.wait_for(lock, interval);
      if (im.stopping) break;
      lock.unlock();
      im.manager.sweep_timeouts();
      lock.lock();
    }
  });
  return port_;
}

void Server::stop() {
  Impl& im = *impl_;
  if (!im.running) return;
  {
    std::lock_guard lock(im.mutex);
    im.stopping = true;
    // shutdown() unblocks the blocking accept and reads in other threads.
    shutdown_fd(im.acceptor->native_handle());
    for (int fd : im.open_fds) shutdown_fd(fd);
  }
  im.wake.notify_all();
  im.accept_thread.join();
  im.sweep_thread.join();
  std::vector<std::thread> connections;
  {
    std::lock_guard lock(im.mutex);
    connections.swap(im.connections);
  }
  for (auto& t : connections) t.join();
  beast::error_code ec;
  im.acceptor->close(ec);
  im.running = false;
}

void Server::run() {
  start();
  std::unique_lock lock(impl_->mutex);
  impl_->wake.wait(lock, [this] { return impl_->stopping; });
}

}  // namespace mhng::service
