#include <doctest.h>

#include <filesystem>
#include <string>

// Eigen (via mhng) must precede httplib: <resolv.h> defines a _res macro.
#include "../support/scripted_human.hpp"
#include "mhng/service/server.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

using namespace mhng;
using nlohmann::json;
namespace fs = std::filesystem;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;

namespace {

const Labels kSort{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};

service::ServerConfig test_config(const std::string& name) {
  service::ServerConfig c;
  c.bind_address = "127.0.0.1";
  c.port = 0;
  c.data_dir = fs::temp_directory_path() / ("mhng_service_" + name);
  c.timeout_sweep_interval = std::chrono::milliseconds(20);
  return c;
}

class WsClient {
 public:
  WsClient(std::uint16_t port, const std::string& target) : ws_(io_) {
    tcp::resolver resolver(io_);
    boost::asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", target);
  }
  ~WsClient() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }
  void send(const WireMessage& m) { send_raw(json(m).dump()); }
  void send_raw(const std::string& text) { ws_.write(boost::asio::buffer(text)); }
  WireMessage read() {
    beast::flat_buffer buffer;
    ws_.read(buffer);
    return json::parse(beast::buffers_to_string(buffer.data())).get<WireMessage>();
  }
  // Reads until a message the scripted human can act on (or `finished`).
  std::vector<WireMessage> read_batch(scripted::Human& h) {
    std::vector<WireMessage> batch;
    for (;;) {
      batch.push_back(read());
      if (batch.back().type == "finished" || batch.back().type == "error") return batch;
      scripted::Human probe = h;
      if (probe.reply({batch.back()})) return batch;
    }
  }

 private:
  boost::asio::io_context io_;
  websocket::stream<tcp::socket> ws_;
};

std::string create_session(httplib::Client& cli, const std::string& condition) {
  SessionConfig sc;
  sc.condition = condition;
  sc.seed = 3;
  sc.inference_sweeps = 10;
  auto res = cli.Post("/sessions", json(sc).dump(), "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 201);
  const json body = json::parse(res->body);
  CHECK(body.at("messages").size() == 2);
  return body.at("session_id");
}

}  // namespace

TEST_CASE("HTTP routes") {
  auto config = test_config("http");
  fs::remove_all(config.data_dir);
  service::Server server(config);
  const auto port = server.start();
  REQUIRE(port != 0);
  httplib::Client cli("127.0.0.1", port);

  auto res = cli.Get("/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body).at("status") == "ok");
  CHECK(json::parse(res->body).at("version") != "0.0.0");

  const std::string id = create_session(cli, "MH");
  res = cli.Get(("/sessions/" + id + "/stimuli").c_str());
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body).at("stimuli").size() == 10);

  CHECK(cli.Get("/sessions/nope/stimuli")->status == 404);
  CHECK(cli.Get("/elsewhere")->status == 404);
  CHECK(cli.Post("/sessions", R"({"condition":"XX"})", "application/json")->status == 400);
  CHECK(cli.Post("/sessions", "{not json", "application/json")->status == 400);
  CHECK(cli.Get(("/sessions/" + id + "/play").c_str())->status == 426);
  CHECK(cli.Get(("/sessions/" + id + "/export").c_str())->status == 409);

  const std::string cat = "/sessions/" + id + "/categorization";
  CHECK(cli.Post(cat.c_str(), R"({"labels":[0,1]})", "application/json")->status == 400);
  CHECK(cli.Post(cat.c_str(), R"({})", "application/json")->status == 400);
  res = cli.Post(cat.c_str(), json{{"labels", kSort}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body).at("messages")[0].at("type") == "state_sync");
  CHECK(cli.Post(cat.c_str(), json{{"labels", kSort}}.dump(), "application/json")->status == 409);

  res = cli.Get(("/sessions/" + id + "/export?allow_incomplete=1").c_str());
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body).at("incomplete") == true);
  server.stop();
}

TEST_CASE("WebSocket play through a full session, with a reconnect") {
  auto config = test_config("ws");
  fs::remove_all(config.data_dir);
  service::Server server(config);
  const auto port = server.start();
  httplib::Client cli("127.0.0.1", port);
  const std::string id = create_session(cli, "MH");
  REQUIRE(cli.Post(("/sessions/" + id + "/categorization").c_str(), json{{"labels", kSort}}.dump(),
                   "application/json")->status == 200);

  scripted::Human h;
  h.labels = kSort;
  std::size_t answered = 0;
  {
    WsClient ws(port, "/sessions/" + id + "/play");
    auto batch = ws.read_batch(h);
    // Garbage does not disturb the session.
    ws.send_raw("{not json");
    const auto err = ws.read();
    CHECK(err.type == "error");
    CHECK(err.payload.at("code") == "malformed");
    while (answered < 60) {
      ws.send(*h.reply(batch));
      ++answered;
      batch = ws.read_batch(h);
    }
  }  // drop the connection mid-session

  {
    WsClient ws(port, "/sessions/" + id + "/play");
    auto batch = ws.read_batch(h);
    for (;;) {
      const auto next = h.reply(batch);
      if (!next) break;
      ws.send(*next);
      batch = ws.read_batch(h);
    }
    CHECK(batch.back().type == "finished");
  }

  auto res = cli.Get(("/sessions/" + id + "/export").c_str());
  REQUIRE(res);
  CHECK(res->status == 200);
  const json bundle = json::parse(res->body);
  CHECK(bundle.at("n_events") == 200);
  CHECK(bundle.at("incomplete") == false);
  CHECK(bundle.contains("ground_truth_labels"));
  server.stop();

  // Restart from the same data dir: the finished session is restored intact.
  service::Server again(config);
  const auto port2 = again.start();
  httplib::Client cli2("127.0.0.1", port2);
  res = cli2.Get(("/sessions/" + id + "/export").c_str());
  REQUIRE(res);
  CHECK(json::parse(res->body).at("final_state_digest") == bundle.at("final_state_digest"));
  again.stop();
}

TEST_CASE("WebSocket upgrade for an unknown session is refused") {
  auto config = test_config("ws404");
  fs::remove_all(config.data_dir);
  service::Server server(config);
  const auto port = server.start();
  CHECK_THROWS(WsClient(port, "/sessions/missing/play"));
  server.stop();
}

TEST_CASE("idle sessions are paused by the sweeper and resumed on connect") {
  auto config = test_config("idle");
  fs::remove_all(config.data_dir);
  std::atomic<std::int64_t> now{0};
  service::Server server(config, [&] { return now.load(); });
  const auto port = server.start();
  httplib::Client cli("127.0.0.1", port);
  SessionConfig sc;
  sc.timeout_ms = 100;
  auto res = cli.Post("/sessions", json(sc).dump(), "application/json");
  const std::string id = json::parse(res->body).at("session_id");
  cli.Post(("/sessions/" + id + "/categorization").c_str(), json{{"labels", kSort}}.dump(), "application/json");
  now = 10'000;
  for (int i = 0; i < 200 && !server.manager().with_session(id, [](Session& s) { return s.paused(); }); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  CHECK(server.manager().with_session(id, [](Session& s) { return s.paused(); }));
  {
    WsClient ws(port, "/sessions/" + id + "/play");
    const auto m = ws.read();
    CHECK(m.type == "state_sync");
    CHECK(m.payload.at("expect").at("type") == "proposal");
  }
  CHECK_FALSE(server.manager().with_session(id, [](Session& s) { return s.paused(); }));
  server.stop();
}

TEST_CASE("server config from environment") {
  ::setenv("MHNG_PORT", "9123", 1);
  ::setenv("MHNG_DATA_DIR", "/tmp/somewhere", 1);
  const auto c = service::ServerConfig::from_env();
  CHECK(c.port == 9123);
  CHECK(c.data_dir == "/tmp/somewhere");
  ::setenv("MHNG_PORT", "70000", 1);
  CHECK_THROWS_AS(service::ServerConfig::from_env(), ConfigError);
  ::unsetenv("MHNG_PORT");
  ::unsetenv("MHNG_DATA_DIR");
}
