#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "../support/scripted_human.hpp"
#include "mhng/behavior.hpp"
#include "mhng/errors.hpp"
#include "mhng/session.hpp"

using namespace mhng;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

SessionConfig cfg(const std::string& condition, std::uint64_t seed = 1) {
  SessionConfig c;
  c.condition = condition;
  c.seed = seed;
  c.inference_sweeps = 20;
  return c;
}

Session make_session(const std::string& condition, std::uint64_t seed = 1) {
  return Session("s" + std::to_string(seed), cfg(condition, seed), resolve_dataset("default", {}), 1000);
}

const Labels kFirstSort{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};

// Plays a full session with a scripted human; returns all server messages.
std::vector<WireMessage> play_through(Session& s, scripted::Human& h, std::int64_t& clock) {
  h.labels = kFirstSort;
  auto opening = s.opening_messages();
  auto first = s.submit_initial_categorization(kFirstSort, ++clock);
  auto rest = scripted::play(h, first, [&](const WireMessage& m) { return s.handle(m, ++clock); });
  opening.insert(opening.end(), rest.begin(), rest.end());
  return opening;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mhng_session_" + name);
  fs::remove_all(p);
  return p;
}

void collect_numbers(const json& j, std::vector<double>& out, std::vector<std::string>& keys) {
  if (j.is_number_float()) out.push_back(j.get<double>());
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      keys.push_back(it.key());
      collect_numbers(it.value(), out, keys);
    }
  }
  if (j.is_array()) {
    for (const auto& v : j) collect_numbers(v, out, keys);
  }
}

}  // namespace

TEST_CASE("session creation") {
  Session s = make_session("MH");
  CHECK(s.phase() == SessionPhase::kInitialCategorization);
  const auto open = s.opening_messages();
  REQUIRE(open.size() == 2);
  CHECK(open[0].type == "session_created");
  CHECK(open[1].type == "stimuli");
  CHECK(open[1].payload.at("stimuli").size() == 10);
  CHECK(open[0].seq < open[1].seq);
  CHECK_THROWS_AS(Session("x", cfg("XX"), resolve_dataset("default", {}), 0), ConfigError);
  CHECK_THROWS_AS(Session("x", cfg("LB:0.5,0.2"), resolve_dataset("default", {}), 0), ConfigError);
  CHECK_THROWS_AS(Session("x", cfg("human"), resolve_dataset("default", {}), 0), ConfigError);
}

TEST_CASE("same seed and condition give the same agent initialization") {
  CHECK(make_session("MH", 4).agent_init_digest() == make_session("MH", 4).agent_init_digest());
  CHECK(make_session("AA", 4).agent_init_digest() == make_session("MH", 4).agent_init_digest());
}

TEST_CASE("dataset references") {
  CHECK(resolve_dataset("seed:5", {}).n_objects() == 10);
  CHECK_THROWS_AS(resolve_dataset("seed:x", {}), ConfigError);
  CHECK_THROWS_AS(resolve_dataset("../etc/passwd", {}), ConfigError);
  CHECK_THROWS_AS(resolve_dataset("nothere", scratch("ds")), ConfigError);
  const fs::path dir = scratch("ds2");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "mine.csv");
    write_stimulus_csv(out, resolve_dataset("seed:9", {}));
  }
  CHECK((resolve_dataset("mine", dir).features - resolve_dataset("seed:9", {}).features).norm() == 0.0);
}

TEST_CASE("initial categorization validation and phase rules") {
  Session s = make_session("MH");
  CHECK_THROWS_AS(s.submit_initial_categorization(Labels(9, 0), 1), ShapeError);
  CHECK_THROWS_AS(s.submit_initial_categorization(Labels(10, 3), 1), ShapeError);
  const auto out = s.submit_initial_categorization(kFirstSort, 2);
  CHECK(s.phase() == SessionPhase::kNaming);
  REQUIRE(out.size() == 1);
  CHECK(out[0].type == "state_sync");
  CHECK(out[0].payload.at("round") == 1);
  CHECK(out[0].payload.at("step") == 1);
  CHECK(out[0].payload.at("expect").at("type") == "proposal");  // human names first
  CHECK_THROWS_AS(s.submit_initial_categorization(kFirstSort, 3), ProtocolError);
}

TEST_CASE("stale and out-of-turn messages are rejected with a state_sync") {
  Session s = make_session("MH");
  const auto out = s.submit_initial_categorization(kFirstSort, 2);
  const auto expect = out[0].payload.at("expect");
  const std::size_t object = expect.at("object");
  auto r = s.handle({"propose", {{"object", object}, {"sign", 0}}, expect.at("seq").get<std::uint64_t>() + 5}, 3);
  REQUIRE(r.size() == 1);
  CHECK(r[0].type == "state_sync");
  CHECK(r[0].payload.at("rejected") == "stale_seq");
  r = s.handle({"decision", {{"accepted", true}}, 1}, 3);
  CHECK(r[0].payload.at("rejected") == "no_pending_proposal");
  r = s.handle({"propose", {{"object", (object + 1) % 10}, {"sign", 0}}, expect.at("seq")}, 3);
  CHECK(r[0].payload.at("rejected") == "wrong_object");
  r = s.handle({"propose", {{"object", object}, {"sign", 7}}, expect.at("seq")}, 3);
  CHECK(r[0].type == "error");
  r = s.handle({"dance", {}, 0}, 3);
  CHECK(r[0].type == "error");
  CHECK(s.events().empty());
  // The correct message still works afterwards.
  r = s.handle({"propose", {{"object", object}, {"sign", 1}}, expect.at("seq")}, 4);
  CHECK(r[0].type == "decision");
  CHECK(s.events().size() == 1);
}

TEST_CASE("AA agent always accepts the human's proposal") {
  Session s = make_session("AA", 3);
  scripted::Human h;
  std::int64_t clock = 0;
  play_through(s, h, clock);
  int human_spoke = 0;
  for (const auto& e : s.events()) {
    if (e.speaker_id != "human") continue;
    ++human_spoke;
    CHECK(e.accepted);
    CHECK(e.decision_source == "AA");
  }
  CHECK(human_spoke == 100);
}

TEST_CASE("full session: 200 events, finished, replayable export") {
  for (const char* cond : {"MH", "AA", "AR"}) {
    Session s = make_session(cond, 7);
    scripted::Human h;
    h.accept_probability = 0.6;
    std::int64_t clock = 1000;
    const auto seen = play_through(s, h, clock);
    CHECK(s.phase() == SessionPhase::kFinished);
    CHECK(s.events().size() == 200);
    CHECK(seen.back().type == "finished");
    for (std::size_t i = 1; i < seen.size(); ++i) {
      if (seen[i].payload.value("reissued", false)) continue;
      CHECK(seen[i].seq > seen[i - 1].seq);
    }
    // Human accepting a proposal adopts it as their label.
    for (const auto& e : s.events()) {
      if (e.listener_id == "human" && e.accepted) CHECK(e.post_categories_b[e.object] == e.proposed_sign);
      if (e.listener_id == "human") CHECK(e.decision_source == "human");
    }
    const json bundle = s.export_bundle();
    CHECK(bundle.at("incomplete") == false);
    CHECK(bundle.contains("ground_truth_labels"));
    CHECK(bundle.at("metrics").at("ari_trajectory").size() == 201);
    for (const auto& e : bundle.at("events")) CHECK_NOTHROW(validate_event_json(e));
    // Every human-listener event carries an inferred r after export.
    for (const auto& e : bundle.at("events")) {
      if (e.at("listener_id") == "human") {
        CHECK(e.at("mh_probability").is_number());
        CHECK(e.at("mh_note") == "inferred_offline");
      }
    }
    const Session back = Session::replay(bundle.at("journal").get<std::vector<json>>());
    CHECK(digest_hex(back.digest()) == bundle.at("final_state_digest"));
    REQUIRE(back.events().size() == 200);
    for (std::size_t i = 0; i < 200; ++i) {
      CHECK(back.events()[i].post_state_digest == s.events()[i].post_state_digest);
      CHECK(back.events()[i].timestamp_ms == s.events()[i].timestamp_ms);
    }
    auto r = s.handle({"decision", {{"accepted", true}}, 1}, clock);
    CHECK(r[0].type == "error");
  }
}

TEST_CASE("no payload reveals agent-view values or ground truth") {
  Session s = make_session("MH", 11);
  scripted::Human h;
  std::int64_t clock = 0;
  const auto seen = play_through(s, h, clock);
  std::vector<double> numbers;
  std::vector<std::string> keys;
  for (const auto& m : seen) collect_numbers(json(m), numbers, keys);
  // Early export is also client-visible.
  const StimulusSet& d = s.data();
  for (Eigen::Index i = 0; i < d.features.rows(); ++i) {
    for (Eigen::Index col : {kU, kV}) {
      for (double x : numbers) CHECK(x != d.features(i, col));
    }
  }
  for (const auto& k : keys) {
    CHECK(k != "ground_truth_labels");
    CHECK(k != "features");
    CHECK(k != "U");
    CHECK(k != "V");
    CHECK(k != "dataset_csv");
  }
}

TEST_CASE("early export is flagged and hides ground truth") {
  Session s = make_session("MH");
  s.submit_initial_categorization(kFirstSort, 5);
  const json b = s.export_bundle();
  CHECK(b.at("incomplete") == true);
  CHECK_FALSE(b.contains("ground_truth_labels"));
  CHECK_FALSE(b.contains("journal"));
  CHECK_FALSE(b.contains("metrics"));
}

TEST_CASE("timeout pauses; reconnect resumes and re-sends the pending proposal") {
  SessionConfig c = cfg("MH");
  c.timeout_ms = 1000;
  Session s("t", c, resolve_dataset("default", {}), 0);
  auto out = s.submit_initial_categorization(kFirstSort, 10);
  const auto expect = out[0].payload.at("expect");
  out = s.handle({"propose", {{"object", expect.at("object")}, {"sign", 0}}, expect.at("seq")}, 20);
  // The agent speaks next: its proposal is pending.
  REQUIRE(s.pending().has_value());
  const auto pending = *s.pending();
  CHECK_FALSE(s.check_timeout(1000));
  CHECK(s.check_timeout(1100));
  CHECK(s.paused());
  CHECK(s.handle({"decision", {{"accepted", true}}, pending.seq}, 1200)[0].payload.at("code") == "paused");
  const auto again = s.resume(5000);
  CHECK_FALSE(s.paused());
  REQUIRE(again.size() == 2);
  CHECK(again[0].type == "state_sync");
  CHECK(again[0].payload.at("expect").at("type") == "decision");
  CHECK(again[1].type == "propose");
  CHECK(again[1].seq == pending.seq);
  CHECK(again[1].payload.at("sign") == pending.sign);
  out = s.handle({"decision", {{"accepted", false}}, pending.seq}, 5100);
  CHECK(s.events().size() == 2);
  // Initial categorization never times out.
  Session fresh("u", c, resolve_dataset("default", {}), 0);
  CHECK_FALSE(fresh.check_timeout(1'000'000));
}

TEST_CASE("voluntary recategorization") {
  Session s = make_session("MH");
  s.submit_initial_categorization(kFirstSort, 1);
  const auto before = s.digest();
  Labels changed = kFirstSort;
  changed[0] = 2;
  auto out = s.handle({"categorize", {{"labels", changed}}, 0}, 2);
  CHECK(out[0].type == "state_sync");
  CHECK(s.human_labels() == changed);
  CHECK(s.digest() != before);
  out = s.handle({"categorize", {{"labels", Labels(3, 0)}}, 0}, 3);
  CHECK(out[0].type == "error");
}

TEST_CASE("MH agent decisions calibrate to their logged r") {
  std::vector<AcceptanceSample> samples;
  for (std::uint64_t seed = 1; samples.size() < 1200; ++seed) {
    Session s = make_session("MH", seed);
    scripted::Human h;
    h.gen.seed(seed);
    std::int64_t clock = 0;
    play_through(s, h, clock);
    for (const auto& e : s.events()) {
      if (e.listener_id == "agent") samples.push_back({*e.mh_probability, e.accepted});
    }
  }
  const auto bins = binned_acceptance(samples, 10);
  for (const auto& b : bins) {
    if (b.count < 30) continue;  // too few to say anything
    CHECK_MESSAGE(std::abs(*b.rate - b.mean_r) <= 0.05 + 2.0 * std::sqrt(0.25 / b.count), "bin ", b.lower);
  }
}

TEST_CASE("manager persists journals and restores sessions paused") {
  const fs::path dir = scratch("mgr");
  std::int64_t now = 0;
  std::string id;
  std::uint64_t digest = 0;
  std::size_t events = 0;
  {
    SessionManager m(dir, [&] { return now; });
    const auto created = m.create(cfg("MH", 2));
    id = created.session_id;
    CHECK(created.messages.size() == 2);
    CHECK(fs::exists(dir / "sessions" / id / "journal.jsonl"));
    scripted::Human h;
    h.labels = kFirstSort;
    auto first = m.submit_initial_categorization(id, kFirstSort);
    // play a few turns only
    std::size_t turns = 0;
    scripted::play(h, first, [&](const WireMessage& msg) {
      ++now;
      return ++turns > 37 ? std::vector<WireMessage>{} : m.handle(id, msg);
    });
    m.with_session(id, [&](Session& s) {
      digest = s.digest();
      events = s.events().size();
    });
    CHECK(events > 10);
    CHECK_THROWS_AS(m.export_session(id, false), ProtocolError);
    const json early = m.export_session(id, true);
    CHECK(early.at("incomplete") == true);
    CHECK(fs::exists(dir / "sessions" / id / "export" / "events.jsonl"));
    CHECK_THROWS_AS(m.resume("nope"), NotFound);
  }
  SessionManager m(dir, [&] { return now; });
  CHECK(m.restore() == 1);
  m.with_session(id, [&](Session& s) {
    CHECK(s.digest() == digest);
    CHECK(s.events().size() == events);
    CHECK(s.paused());
  });
  auto batch = m.resume(id);
  m.with_session(id, [](Session& s) { CHECK_FALSE(s.paused()); });
  scripted::Human h;
  h.labels = m.with_session(id, [](Session& s) { return s.human_labels(); });
  scripted::play(h, batch, [&](const WireMessage& msg) {
    ++now;
    return m.handle(id, msg);
  });
  const json bundle = m.export_session(id, false);
  CHECK(bundle.at("n_events") == 200);
  CHECK(fs::exists(dir / "sessions" / id / "export" / "metrics.json"));
  // The on-disk journal replays to the same final state.
  std::ifstream in(dir / "sessions" / id / "journal.jsonl");
  std::vector<json> journal;
  std::string line;
  while (std::getline(in, line)) journal.push_back(json::parse(line));
  CHECK(digest_hex(Session::replay(journal).digest()) == bundle.at("final_state_digest"));
}

TEST_CASE("timeout sweep pauses idle sessions") {
  const fs::path dir = scratch("sweep");
  std::int64_t now = 0;
  SessionManager m(dir, [&] { return now; });
  SessionConfig c = cfg("MH");
  c.timeout_ms = 100;
  const auto id = m.create(c).session_id;
  const auto idle = m.create(c).session_id;
  m.submit_initial_categorization(id, kFirstSort);
  now = 50;
  CHECK(m.sweep_timeouts() == 0);
  now = 500;
  CHECK(m.sweep_timeouts() == 1);  // the other one is still categorizing
  m.with_session(idle, [](Session& s) { CHECK_FALSE(s.paused()); });
}

TEST_CASE("concurrent duplicates apply once") {
  const fs::path dir = scratch("conc");
  SessionManager m(dir);
  const auto id = m.create(cfg("MH")).session_id;
  const auto first = m.submit_initial_categorization(id, kFirstSort);
  const auto expect = first[0].payload.at("expect");
  const WireMessage msg{"propose", {{"object", expect.at("object")}, {"sign", 0}}, expect.at("seq")};
  std::atomic<int> applied{0}, rejected{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&] {
      const auto out = m.handle(id, msg);
      if (out[0].type == "decision") ++applied;
      else ++rejected;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(applied == 1);
  CHECK(rejected == 3);
  m.with_session(id, [](Session& s) { CHECK(s.events().size() == 1); });
}

TEST_CASE("wire message JSON") {
  const WireMessage m{"propose", {{"object", 3}}, 9};
  const WireMessage back = json(m).get<WireMessage>();
  CHECK(back.type == "propose");
  CHECK(back.seq == 9);
  CHECK_THROWS_AS(json::parse(R"({"payload":{}})").get<WireMessage>(), ProtocolError);
  const SessionConfig c = cfg("AR", 5);
  CHECK(json(json(c).get<SessionConfig>()) == json(c));
}
