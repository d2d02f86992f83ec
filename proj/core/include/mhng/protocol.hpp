#pragma once

// Joint-attention naming game played as a Metropolis-Hastings naming game:
// the speaker samples a sign from P(s | theta, c_n), the listener accepts with
// min(1, theta_{s*,c} / theta_{s_cur,c}) (or per its strategy), and both
// agents then resample their parameters conditioned on their own signs.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mhng/event.hpp"
#include "mhng/model.hpp"

namespace mhng {

enum class StrategyKind {
  kMetropolisHastings,
  kAlwaysAccept,
  kAlwaysReject,
  kExternal,         // decision injected by a human through the session service
  kLinearBernoulli,  // scripted listener: accept with probability a*r + b
};

struct ListenerStrategy {
  StrategyKind kind = StrategyKind::kMetropolisHastings;
  double a = 1.0;
  double b = 0.0;

  static ListenerStrategy metropolis_hastings() { return {StrategyKind::kMetropolisHastings}; }
  static ListenerStrategy always_accept() { return {StrategyKind::kAlwaysAccept}; }
  static ListenerStrategy always_reject() { return {StrategyKind::kAlwaysReject}; }
  static ListenerStrategy external() { return {StrategyKind::kExternal}; }
  static ListenerStrategy linear_bernoulli(double a, double b);

  /// Accepts "MH", "AA", "AR", "human" and "LB:<a>,<b>". Throws ConfigError.
  static ListenerStrategy parse(std::string_view text);
  /// "MH", "AA", "AR", "human" or "LB".
  std::string code() const;
};

enum class Side { kA, kB };
inline Side other(Side s) { return s == Side::kA ? Side::kB : Side::kA; }

enum class RoleRule { kPerInteraction, kPerRound };
enum class UpdateTiming { kPerInteraction, kPerRound };

struct GameSchedule {
  std::size_t n_rounds = 20;
  std::size_t objects_per_round = 10;
  RoleRule role_rule = RoleRule::kPerInteraction;
  Side first_speaker = Side::kB;
  std::size_t sweeps_per_interaction = 1;  // 0 freezes both agents' parameters and categories
  UpdateTiming update_timing = UpdateTiming::kPerInteraction;

  void validate(std::size_t n_objects) const;
  std::size_t total_interactions() const { return n_rounds * objects_per_round; }
  /// Speaker of the 1-based interaction `step` in 1-based `round`.
  Side speaker_for(std::size_t step, std::size_t round) const;
};

/// Two agents, their private views and the listener strategy each applies
/// when it is the listener. Side A is the computational agent ("agent"),
/// side B its partner ("human", or a model of one in batch runs).
struct Dyad {
  AgentState agent_a;
  AgentState agent_b;
  Observations observations_a;
  Observations observations_b;
  PriorConfig priors_a;
  PriorConfig priors_b;
  GameSchedule schedule;
  ListenerStrategy strategy_a;
  ListenerStrategy strategy_b;
  std::string id_a = "agent";
  std::string id_b = "human";

  AgentState& agent(Side s) { return s == Side::kA ? agent_a : agent_b; }
  const AgentState& agent(Side s) const { return s == Side::kA ? agent_a : agent_b; }
  const Observations& observations(Side s) const { return s == Side::kA ? observations_a : observations_b; }
  const PriorConfig& priors(Side s) const { return s == Side::kA ? priors_a : priors_b; }
  const ListenerStrategy& strategy(Side s) const { return s == Side::kA ? strategy_a : strategy_b; }
  const std::string& id(Side s) const { return s == Side::kA ? id_a : id_b; }

  std::uint64_t digest() const;
  void validate() const;
};

struct MhProbability {
  double value = 1.0;
  /// "" normally; "infinite_ratio" (theta_{s_cur,c} = 0) or "zero_over_zero".
  std::string note;
};

/// theta_{s*,c} / theta_{s_cur,c} for the listener's current category c.
/// May be +inf or NaN (0/0); callers wanting a probability use
/// mh_acceptance_probability.
double mh_ratio(const AgentState& listener, std::size_t object, Label proposed_sign);

MhProbability mh_acceptance(const AgentState& listener, std::size_t object, Label proposed_sign);

/// min(1, ratio) with both zero-denominator cases mapped to 1.
double mh_acceptance_probability(const AgentState& listener, std::size_t object, Label proposed_sign);

struct DecisionRequest {
  std::size_t step = 0;
  std::size_t round = 0;
  std::size_t object = 0;
  Label proposed_sign = 0;
  Label listener_prior_sign = 0;
  double mh_probability = 1.0;
  std::string listener_id;
};

/// Supplies decisions for kExternal listeners. May block.
using DecisionSource = std::function<bool(const DecisionRequest&)>;
/// Timestamp (ms) to stamp on the event of the given step.
using Clock = std::function<std::int64_t(std::size_t step)>;

/// MH: Bernoulli(r) using one uniform draw. AA: true. AR: false.
/// LB: Bernoulli(a r + b). External: asks `external`; throws ProtocolError
/// when no source is provided.
bool listener_decide(const ListenerStrategy& strategy, double r, Rng& rng,
                     const DecisionSource* external = nullptr, const DecisionRequest& request = {});

struct InteractionContext {
  std::size_t step = 1;
  std::size_t round = 1;
  const DecisionSource* external = nullptr;
  Clock clock;
  bool run_updates = true;
};

/// One naming interaction on `object`. Mutates the dyad and returns the
/// event describing it (mh_probability is the pre-decision value).
GameEvent play_interaction(Dyad& dyad, std::size_t object, Side speaker, Rng& rng,
                           const InteractionContext& ctx = {});

/// Runs `sweeps` Gibbs sweeps for both agents conditioned on their signs.
void update_agents(Dyad& dyad, std::size_t sweeps, Rng& rng);

struct GameOptions {
  DecisionSource external;
  Clock clock;
  std::function<void(const GameEvent&, const Dyad&)> on_event;
};

struct GameResult {
  std::vector<GameEvent> events;
  Dyad final_dyad;
};

/// n_rounds x objects_per_round interactions; every round visits each object
/// once in an order drawn from `rng`.
GameResult run_game(Dyad dyad, Rng& rng, const GameOptions& options = {});

struct ReplayReport {
  bool consistent = true;
  std::size_t events_checked = 0;
  std::optional<std::size_t> first_mismatch_step;
  std::string detail;
  std::uint64_t final_digest = 0;
};

/// Re-runs a game from `initial` with a generator seeded by `seed`, feeding
/// logged decisions to kExternal listeners, and compares every event's
/// schedule, proposal, decision and digest against `log`.
ReplayReport replay_game(const Dyad& initial, std::uint64_t seed, std::span<const GameEvent> log);

/// Unsupervised start: signs drawn from pi, then `n_sweeps` sweeps that also
/// resample each s_n from P(s | c_n). Signs end at each object's modal sign
/// over the second half of the sweeps; theta is then redrawn given them.
AgentState initialize_agent_categorization(const Observations& observations, const ModelDims& dims,
                                           const PriorConfig& priors, std::size_t n_sweeps, Rng& rng);

}  // namespace mhng
