#pragma once

// Live sessions: one human against the computational agent. A Session is a
// deterministic state machine driven by journaled inputs, so replaying the
// journal rebuilds it exactly. SessionManager adds per-session locking,
// persistence and timeouts; the HTTP/WebSocket transport lives in
// mhng/service/server.hpp.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhng/errors.hpp"
#include "mhng/event.hpp"
#include "mhng/experiment.hpp"
#include "mhng/protocol.hpp"
#include "mhng/stimuli.hpp"

namespace mhng {

inline constexpr int kWireSchemaVersion = 1;

enum class SessionPhase { kInitialCategorization, kNaming, kFinished };
std::string to_string(SessionPhase phase);

/// type is one of session_created, stimuli, propose, decision, categorize,
/// state_sync, finished, error. Server messages carry a per-session seq that
/// strictly increases; client decisions echo the seq of the proposal they
/// answer and client proposals echo the seq of the prompt asking for them.
struct WireMessage {
  std::string type;
  nlohmann::json payload = nlohmann::json::object();
  std::uint64_t seq = 0;
};

void to_json(nlohmann::json& j, const WireMessage& m);
void from_json(const nlohmann::json& j, WireMessage& m);

struct SessionConfig {
  std::string condition = "MH";  // agent's listener strategy: MH, AA or AR
  /// "default" (shipped spec), "seed:<n>" (shipped means, given seed) or the
  /// stem of a CSV in <data dir>/datasets.
  std::string dataset = "default";
  std::uint64_t seed = 1;
  GameSchedule schedule;  // first speaker is the human (side B)
  AgentModelConfig model;
  std::size_t n_signs = 3;
  std::int64_t timeout_ms = 10 * 60 * 1000;
  std::size_t inference_sweeps = 200;  // offline pass over the human's labels at export
};

void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

/// Resolves a dataset reference. Throws ConfigError for an unknown or
/// malformed reference.
StimulusSet resolve_dataset(const std::string& ref, const std::filesystem::path& datasets_dir);

struct PendingProposal {
  std::size_t object = 0;
  Label sign = 0;
  std::string proposer;  // "agent"
  std::uint64_t seq = 0;
};

class Session {
 public:
  /// Journal entry kinds: create, categorize_initial, propose, decision,
  /// categorize, pause, resume. Each carries the wall-clock time it was
  /// applied at, so replays stamp identical timestamps.
  Session(std::string id, SessionConfig config, StimulusSet data, std::int64_t now_ms);

  const std::string& id() const { return id_; }
  const SessionConfig& config() const { return config_; }
  SessionPhase phase() const { return phase_; }
  bool paused() const { return paused_; }
  std::size_t round() const { return round_; }
  std::size_t step() const { return step_; }
  std::int64_t last_activity_ms() const { return last_activity_ms_; }
  const std::vector<GameEvent>& events() const { return events_; }
  const std::vector<nlohmann::json>& journal() const { return journal_; }
  const std::optional<PendingProposal>& pending() const { return pending_; }
  const Labels& human_labels() const { return dyad_.agent_b.categories; }
  const Labels& initial_labels() const { return initial_labels_; }
  const StimulusSet& data() const { return data_; }
  const Dyad& dyad() const { return dyad_; }
  std::uint64_t digest() const { return dyad_.digest(); }
  std::uint64_t agent_init_digest() const { return agent_init_digest_; }

  /// session_created followed by stimuli (human-view render descriptors only).
  std::vector<WireMessage> opening_messages();
  nlohmann::json stimuli_payload() const;

  std::vector<WireMessage> submit_initial_categorization(const Labels& labels, std::int64_t now_ms);
  /// Dispatches a client message: propose, decision or categorize.
  std::vector<WireMessage> handle(const WireMessage& message, std::int64_t now_ms);
  /// Pauses when idle for longer than the timeout during naming. Returns
  /// true when the session was paused by this call.
  bool check_timeout(std::int64_t now_ms);
  /// Reconnect: unpauses and re-sends the current expectation.
  std::vector<WireMessage> resume(std::int64_t now_ms);
  /// state_sync for the current state, re-issuing any pending prompt.
  std::vector<WireMessage> sync(const std::string& rejected_reason = "");

  /// Export bundle. Ground truth and ARI trajectories are included only once
  /// the session is finished; earlier exports are flagged incomplete.
  nlohmann::json export_bundle() const;

  /// Rebuilds a session from its journal (the create entry embeds the
  /// dataset). Throws ProtocolError when the journal is inconsistent.
  static Session replay(const std::vector<nlohmann::json>& journal);

  /// Called with every journal entry as it is appended.
  std::function<void(const nlohmann::json&)> on_journal;

 private:
  WireMessage make(const std::string& type, nlohmann::json payload);
  void record(nlohmann::json entry);
  std::vector<WireMessage> prompt();
  std::vector<WireMessage> apply_human_proposal(Label sign, std::int64_t now_ms);
  std::vector<WireMessage> apply_human_decision(bool accepted, std::int64_t now_ms);
  std::vector<WireMessage> apply_recategorization(const Labels& labels, std::int64_t now_ms);
  std::vector<WireMessage> finish_interaction(GameEvent event, std::int64_t now_ms);
  void start_round();
  Side current_speaker() const;
  std::size_t current_object() const;
  void validate_labels(const Labels& labels) const;
  nlohmann::json state_payload() const;

  std::string id_;
  SessionConfig config_;
  StimulusSet data_;
  Dyad dyad_;  // side A: agent, side B: the human's labels as both c and s
  Rng rng_;
  SessionPhase phase_ = SessionPhase::kInitialCategorization;
  bool paused_ = false;
  std::size_t round_ = 0;
  std::size_t step_ = 0;  // 1-based index of the current interaction
  std::vector<std::size_t> order_;
  std::uint64_t seq_ = 0;
  std::uint64_t prompt_seq_ = 0;  // seq of the last "your turn to name" prompt
  std::optional<PendingProposal> pending_;
  std::vector<GameEvent> events_;
  std::vector<nlohmann::json> journal_;
  Labels initial_labels_;
  Labels agent_initial_categories_;
  std::int64_t last_activity_ms_ = 0;
  std::uint64_t agent_init_digest_ = 0;
};

/// Thread-safe registry of sessions with an append-only journal per session
/// under <data_dir>/sessions/<id>/journal.jsonl.
class SessionManager {
 public:
  using ClockFn = std::function<std::int64_t()>;

  explicit SessionManager(std::filesystem::path data_dir, ClockFn clock = {});

  /// Replays every journal found on disk; restored sessions in the naming
  /// phase come back paused. Returns the number restored.
  std::size_t restore();

  struct Created {
    std::string session_id;
    std::vector<WireMessage> messages;
  };
  Created create(const SessionConfig& config);

  bool exists(const std::string& id) const;
  std::vector<std::string> ids() const;

  /// Runs `fn` with exclusive access to the session. Throws NotFound.
  template <typename Fn>
  auto with_session(const std::string& id, Fn&& fn) {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    return fn(slot->session);
  }

  std::vector<WireMessage> submit_initial_categorization(const std::string& id, const Labels& labels);
  std::vector<WireMessage> handle(const std::string& id, const WireMessage& message);
  std::vector<WireMessage> resume(const std::string& id);
  /// Pauses every idle naming session; returns how many were paused.
  std::size_t sweep_timeouts();
  /// Export bundle; also writes events.jsonl and metrics.json next to the
  /// journal. Throws ProtocolError for unfinished sessions unless
  /// `allow_incomplete`.
  nlohmann::json export_session(const std::string& id, bool allow_incomplete);

  const std::filesystem::path& data_dir() const { return data_dir_; }
  std::filesystem::path datasets_dir() const { return data_dir_ / "datasets"; }
  std::int64_t now() const { return clock_(); }

 private:
  struct Slot {
    explicit Slot(Session s) : session(std::move(s)) {}
    std::mutex mutex;
    Session session;
  };

  std::shared_ptr<Slot> find(const std::string& id) const;
  void attach_journal(Slot& slot);
  std::string new_id();

  std::filesystem::path data_dir_;
  ClockFn clock_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t id_counter_ = 0;
};

}  // namespace mhng
