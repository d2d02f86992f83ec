#include "mhng/protocol.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <string>

#include "mhng/errors.hpp"

namespace mhng {

ListenerStrategy ListenerStrategy::linear_bernoulli(double a, double b) {
  if (b < 0.0 || b > 1.0 || a + b > 1.0 || a + b < 0.0) {
    throw ConfigError("linear Bernoulli listener needs a*r + b in [0, 1] for r in [0, 1]");
  }
  return {StrategyKind::kLinearBernoulli, a, b};
}

ListenerStrategy ListenerStrategy::parse(std::string_view text) {
  if (text == "MH") return metropolis_hastings();
  if (text == "AA") return always_accept();
  if (text == "AR") return always_reject();
  if (text == "human" || text == "external") return external();
  if (text.starts_with("LB:")) {
    const std::string rest(text.substr(3));
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw ConfigError("LB strategy expects LB:<a>,<b>");
    try {
      return linear_bernoulli(std::stod(rest.substr(0, comma)), std::stod(rest.substr(comma + 1)));
    } catch (const std::logic_error&) {
      throw ConfigError("LB strategy expects numeric a and b");
    }
  }
  throw ConfigError("unknown listener strategy '" + std::string(text) + "' (expected MH, AA, AR)");
}

std::string ListenerStrategy::code() const {
  switch (kind) {
    case StrategyKind::kMetropolisHastings: return "MH";
    case StrategyKind::kAlwaysAccept: return "AA";
    case StrategyKind::kAlwaysReject: return "AR";
    case StrategyKind::kExternal: return "human";
    case StrategyKind::kLinearBernoulli: return "LB";
  }
  return "?";
}

void GameSchedule::validate(std::size_t n_objects) const {
  if (n_rounds < 1) throw ConfigError("GameSchedule: n_rounds must be >= 1");
  if (objects_per_round != n_objects) throw ConfigError("GameSchedule: objects_per_round must equal N");
}

Side GameSchedule::speaker_for(std::size_t step, std::size_t round) const {
  const std::size_t turn = role_rule == RoleRule::kPerInteraction ? step : round;
  return (turn - 1) % 2 == 0 ? first_speaker : other(first_speaker);
}

std::uint64_t Dyad::digest() const {
  return state_digest(agent_a.categories, agent_a.signs, agent_b.categories, agent_b.signs);
}

void Dyad::validate() const {
  agent_a.validate();
  agent_b.validate();
  if (agent_a.n_objects() != agent_b.n_objects() || agent_a.n_signs() != agent_b.n_signs()) {
    throw ShapeError("Dyad: agents disagree on N or L");
  }
  if (static_cast<std::size_t>(observations_a.rows()) != agent_a.n_objects() ||
      static_cast<std::size_t>(observations_b.rows()) != agent_b.n_objects()) {
    throw ShapeError("Dyad: observation matrices must have N rows");
  }
  schedule.validate(agent_a.n_objects());
}

double mh_ratio(const AgentState& listener, std::size_t object, Label proposed_sign) {
  if (object >= listener.n_objects()) throw ParameterError("mh_ratio: object out of range");
  if (proposed_sign < 0 || static_cast<std::size_t>(proposed_sign) >= listener.n_signs()) {
    throw ParameterError("mh_ratio: sign out of range");
  }
  const Label c = listener.categories[object];
  const Label current = listener.signs[object];
  return listener.theta(proposed_sign, c) / listener.theta(current, c);
}

MhProbability mh_acceptance(const AgentState& listener, std::size_t object, Label proposed_sign) {
  const double ratio = mh_ratio(listener, object, proposed_sign);
  if (proposed_sign == listener.signs[object]) return {1.0, ""};
  if (std::isnan(ratio)) return {1.0, "zero_over_zero"};
  if (std::isinf(ratio)) return {1.0, "infinite_ratio"};
  return {std::min(1.0, ratio), ""};
}

double mh_acceptance_probability(const AgentState& listener, std::size_t object, Label proposed_sign) {
  return mh_acceptance(listener, object, proposed_sign).value;
}

bool listener_decide(const ListenerStrategy& strategy, double r, Rng& rng, const DecisionSource* external,
                     const DecisionRequest& request) {
  if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("listener_decide: r must lie in [0, 1]");
  switch (strategy.kind) {
    case StrategyKind::kMetropolisHastings: return uniform01(rng) < r;
    case StrategyKind::kAlwaysAccept: return true;
    case StrategyKind::kAlwaysReject: return false;
    case StrategyKind::kLinearBernoulli: return uniform01(rng) < std::clamp(strategy.a * r + strategy.b, 0.0, 1.0);
    case StrategyKind::kExternal:
      if (external == nullptr || !*external) throw ProtocolError("external listener without a decision source");
      return (*external)(request);
  }
  throw ProtocolError("listener_decide: unknown strategy");
}

void update_agents(Dyad& dyad, std::size_t sweeps, Rng& rng) {
  for (std::size_t i = 0; i < sweeps; ++i) {
    gibbs_sweep_agent(dyad.agent_a, dyad.observations_a, dyad.priors_a, rng);
    gibbs_sweep_agent(dyad.agent_b, dyad.observations_b, dyad.priors_b, rng);
  }
}

GameEvent play_interaction(Dyad& dyad, std::size_t object, Side speaker_side, Rng& rng,
                           const InteractionContext& ctx) {
  const Side listener_side = other(speaker_side);
  AgentState& speaker = dyad.agent(speaker_side);
  AgentState& listener = dyad.agent(listener_side);
  if (object >= speaker.n_objects()) throw ParameterError("play_interaction: object out of range");

  const Eigen::VectorXd proposal = speaker_proposal_distribution(object, speaker);
  const Label proposed =
      static_cast<Label>(sample_categorical(std::span<const double>(proposal.data(), proposal.size()), rng));
  const MhProbability r = mh_acceptance(listener, object, proposed);

  GameEvent event;
  event.step = ctx.step;
  event.round = ctx.round;
  event.object = object;
  event.speaker_id = dyad.id(speaker_side);
  event.listener_id = dyad.id(listener_side);
  event.proposed_sign = proposed;
  event.speaker_sign = speaker.signs[object];
  event.listener_prior_sign = listener.signs[object];
  event.mh_probability = r.value;
  event.mh_note = r.note;

  const ListenerStrategy& strategy = dyad.strategy(listener_side);
  const DecisionRequest request{ctx.step, ctx.round, object, proposed, listener.signs[object], r.value,
                                event.listener_id};
  event.accepted = listener_decide(strategy, r.value, rng, ctx.external, request);
  event.decision_source = strategy.code();
  if (event.accepted) listener.signs[object] = proposed;

  if (ctx.run_updates) update_agents(dyad, dyad.schedule.sweeps_per_interaction, rng);

  event.timestamp_ms = ctx.clock ? ctx.clock(ctx.step) : static_cast<std::int64_t>(ctx.step);
  event.post_state_digest = dyad.digest();
  event.post_categories_a = dyad.agent_a.categories;
  event.post_signs_a = dyad.agent_a.signs;
  event.post_categories_b = dyad.agent_b.categories;
  event.post_signs_b = dyad.agent_b.signs;
  return event;
}

GameResult run_game(Dyad dyad, Rng& rng, const GameOptions& options) {
  dyad.validate();
  const GameSchedule& schedule = dyad.schedule;
  GameResult result;
  result.events.reserve(schedule.total_interactions());
  std::vector<std::size_t> order(schedule.objects_per_round);
  std::size_t step = 0;
  const bool per_interaction = schedule.update_timing == UpdateTiming::kPerInteraction;
  for (std::size_t round = 1; round <= schedule.n_rounds; ++round) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
      ++step;
      InteractionContext ctx;
      ctx.step = step;
      ctx.round = round;
      ctx.external = options.external ? &options.external : nullptr;
      ctx.clock = options.clock;
      ctx.run_updates = per_interaction;
      // Per-round timing sweeps once, after the round's last decision.
      if (!per_interaction && i + 1 == order.size()) ctx.run_updates = true;
      GameEvent event = play_interaction(dyad, order[i], schedule.speaker_for(step, round), rng, ctx);
      if (options.on_event) options.on_event(event, dyad);
      result.events.push_back(std::move(event));
    }
  }
  result.final_dyad = std::move(dyad);
  return result;
}

ReplayReport replay_game(const Dyad& initial, std::uint64_t seed, std::span<const GameEvent> log) {
  ReplayReport report;
  std::size_t cursor = 0;
  GameOptions options;
  options.external = [&](const DecisionRequest& req) -> bool {
    if (cursor >= log.size() || log[cursor].step != req.step) {
      throw ProtocolError("replay: no logged decision for step " + std::to_string(req.step));
    }
    return log[cursor].accepted;
  };
  options.clock = [&](std::size_t) -> std::int64_t {
    return cursor < log.size() ? log[cursor].timestamp_ms : 0;
  };
  options.on_event = [&](const GameEvent& e, const Dyad&) {
    if (cursor >= log.size()) {
      if (report.consistent) {
        report.consistent = false;
        report.first_mismatch_step = e.step;
        report.detail = "log is shorter than the replayed game";
      }
      ++cursor;
      return;
    }
    const GameEvent& want = log[cursor];
    std::string why;
    if (e.step != want.step || e.round != want.round) why = "step/round";
    else if (e.object != want.object) why = "object";
    else if (e.speaker_id != want.speaker_id) why = "speaker";
    else if (e.proposed_sign != want.proposed_sign) why = "proposed_sign";
    else if (e.accepted != want.accepted) why = "decision";
    else if (e.post_state_digest != want.post_state_digest) why = "post_state_digest";
    if (!why.empty() && report.consistent) {
      report.consistent = false;
      report.first_mismatch_step = want.step;
      report.detail = why;
    }
    ++report.events_checked;
    ++cursor;
  };
  Rng rng(seed);
  GameResult result = run_game(initial, rng, options);
  if (report.consistent && result.events.size() != log.size()) {
    report.consistent = false;
    report.detail = "log length differs from the replayed game";
  }
  report.final_digest = result.final_dyad.digest();
  return report;
}

AgentState initialize_agent_categorization(const Observations& observations, const ModelDims& dims,
                                           const PriorConfig& priors, std::size_t n_sweeps, Rng& rng) {
  if (static_cast<std::size_t>(observations.rows()) != dims.n_objects ||
      static_cast<std::size_t>(observations.cols()) != dims.obs_dim) {
    throw ShapeError("initialize_agent_categorization: observations do not match dims");
  }
  AgentState state = sample_initial_state(dims, priors, rng);
  const auto L = static_cast<Eigen::Index>(dims.n_signs);
  Eigen::MatrixXd sign_counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dims.n_objects), L);
  std::vector<double> weights(static_cast<std::size_t>(L));
  const std::size_t tally_from = n_sweeps / 2;
  for (std::size_t sweep = 0; sweep < n_sweeps; ++sweep) {
    gibbs_sweep_agent(state, observations, priors, rng);
    for (std::size_t n = 0; n < dims.n_objects; ++n) {
      const Eigen::VectorXd p = speaker_proposal_distribution(n, state);
      std::copy(p.data(), p.data() + p.size(), weights.begin());
      state.signs[n] = static_cast<Label>(sample_categorical(weights, rng));
      if (sweep >= tally_from) sign_counts(static_cast<Eigen::Index>(n), state.signs[n]) += 1.0;
    }
  }
  if (n_sweeps > 0) {
    for (std::size_t n = 0; n < dims.n_objects; ++n) {
      Eigen::Index best = 0;
      sign_counts.row(static_cast<Eigen::Index>(n)).maxCoeff(&best);
      state.signs[n] = static_cast<Label>(best);
    }
    state.theta = resample_theta(state, priors, rng);
  }
  return state;
}

}  // namespace mhng
