#include "mhng/session.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

#include "mhng/behavior.hpp"
#include "mhng/metrics.hpp"
#include "mhng/random.hpp"

namespace mhng {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kCategories = 3;
constexpr std::size_t kAgreementWindow = 5;
constexpr std::size_t kAcceptanceBins = 10;

ModelDims session_dims(const SessionConfig& config, std::size_t n_objects) {
  ModelDims dims;
  dims.n_objects = n_objects;
  dims.n_categories = kCategories;
  dims.n_signs = config.n_signs;
  dims.obs_dim = 3;
  return dims;
}

std::string sign_name(std::size_t l) { return std::string(1, static_cast<char>('A' + l)); }

std::string dataset_csv(const StimulusSet& data) {
  std::ostringstream out;
  write_stimulus_csv(out, data);
  return out.str();
}

json bins_json(const std::vector<AcceptanceBin>& bins) {
  json out = json::array();
  for (const auto& b : bins) {
    json rate = b.rate ? json(*b.rate) : json(nullptr);
    out.push_back({{"lower", b.lower}, {"upper", b.upper}, {"mean_r", b.mean_r}, {"rate", rate}, {"count", b.count}});
  }
  return out;
}

json acceptance_json(std::span<const GameEvent> events, const std::string& listener_id) {
  const auto samples = acceptance_samples(events, listener_id);
  json out{{"listener_id", listener_id}, {"n_samples", samples.size()}};
  if (!samples.empty()) {
    const FitResult fit = fit_linear_bernoulli(samples);
    out["a"] = fit.a;
    out["b"] = fit.b;
    out["nll"] = fit.nll;
    out["degenerate"] = fit.degenerate;
    out["bins"] = bins_json(binned_acceptance(samples, kAcceptanceBins));
  }
  return out;
}

std::int64_t system_now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

std::string to_string(SessionPhase phase) {
  switch (phase) {
    case SessionPhase::kInitialCategorization: return "initial_categorization";
    case SessionPhase::kNaming: return "naming";
    case SessionPhase::kFinished: return "finished";
  }
  return "?";
}

void to_json(json& j, const WireMessage& m) { j = json{{"type", m.type}, {"payload", m.payload}, {"seq", m.seq}}; }

void from_json(const json& j, WireMessage& m) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    throw ProtocolError("message needs a string 'type'");
  }
  m.type = j.at("type").get<std::string>();
  m.payload = j.value("payload", json::object());
  m.seq = j.value("seq", std::uint64_t{0});
}

void to_json(json& j, const SessionConfig& c) {
  j = json{{"condition", c.condition},   {"dataset", c.dataset},     {"seed", c.seed},
           {"schedule", c.schedule},     {"model", c.model},         {"n_signs", c.n_signs},
           {"timeout_ms", c.timeout_ms}, {"inference_sweeps", c.inference_sweeps}};
}

void from_json(const json& j, SessionConfig& c) {
  if (!j.is_object()) throw ConfigError("session config must be a JSON object");
  c = SessionConfig{};
  c.condition = j.value("condition", c.condition);
  c.dataset = j.value("dataset", c.dataset);
  c.seed = j.value("seed", c.seed);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<GameSchedule>();
  if (j.contains("model")) c.model = j.at("model").get<AgentModelConfig>();
  c.n_signs = j.value("n_signs", c.n_signs);
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.inference_sweeps = j.value("inference_sweeps", c.inference_sweeps);
}

StimulusSet resolve_dataset(const std::string& ref, const fs::path& datasets_dir) {
  if (ref == "default") return generate_dataset(GroundTruthSpec::builtin_default());
  if (ref.starts_with("seed:")) {
    GroundTruthSpec spec = GroundTruthSpec::builtin_default();
    try {
      std::size_t used = 0;
      spec.seed = std::stoull(ref.substr(5), &used);
      if (used != ref.size() - 5) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw ConfigError("dataset 'seed:<n>' needs a non-negative integer");
    }
    return generate_dataset(spec);
  }
  static const std::regex name_re("[A-Za-z0-9_-]+");
  if (!std::regex_match(ref, name_re)) throw ConfigError("malformed dataset reference '" + ref + "'");
  std::ifstream in(datasets_dir / (ref + ".csv"));
  if (!in) throw ConfigError("unknown dataset '" + ref + "'");
  return read_stimulus_csv(in);
}

// ---------------------------------------------------------------------------
// Session

Session::Session(std::string id, SessionConfig config, StimulusSet data, std::int64_t now_ms)
    : id_(std::move(id)), config_(std::move(config)), data_(std::move(data)) {
  const ListenerStrategy strategy = ListenerStrategy::parse(config_.condition);
  if (strategy.kind != StrategyKind::kMetropolisHastings && strategy.kind != StrategyKind::kAlwaysAccept &&
      strategy.kind != StrategyKind::kAlwaysReject) {
    throw ConfigError("session condition must be MH, AA or AR");
  }
  // The human's label doubles as their sign, so signs and categories coincide.
  if (config_.n_signs != kCategories) throw ConfigError("session n_signs must be 3");
  if (config_.timeout_ms <= 0) throw ConfigError("timeout_ms must be > 0");
  config_.model.validate();
  config_.schedule.first_speaker = Side::kB;
  config_.schedule.validate(data_.n_objects());

  const ModelDims dims = session_dims(config_, data_.n_objects());
  dyad_.observations_a = config_.model.perceive(data_.view_agent);
  dyad_.observations_b = config_.model.perceive(data_.view_human);
  dyad_.priors_a = config_.model.priors_for(dyad_.observations_a);
  dyad_.priors_b = config_.model.priors_for(dyad_.observations_b);
  Rng init(derive_seed(config_.seed, 1));
  dyad_.agent_a = initialize_agent_categorization(dyad_.observations_a, dims, dyad_.priors_a,
                                                  config_.model.agent_init_sweeps, init);
  dyad_.agent_a.rng_seed = config_.seed;
  // The human side only holds labels; its parameters are never sampled live.
  Rng shape(derive_seed(config_.seed, 4));
  dyad_.agent_b = sample_initial_state(dims, dyad_.priors_b, shape);
  std::fill(dyad_.agent_b.categories.begin(), dyad_.agent_b.categories.end(), 0);
  std::fill(dyad_.agent_b.signs.begin(), dyad_.agent_b.signs.end(), 0);
  dyad_.schedule = config_.schedule;
  dyad_.strategy_a = strategy;
  dyad_.strategy_b = ListenerStrategy::external();
  rng_ = Rng(derive_seed(config_.seed, 2));
  agent_initial_categories_ = dyad_.agent_a.categories;
  agent_init_digest_ = dyad_.digest();
  last_activity_ms_ = now_ms;
  record({{"kind", "create"},
          {"id", id_},
          {"config", config_},
          {"dataset_csv", dataset_csv(data_)},
          {"time", now_ms}});
}

WireMessage Session::make(const std::string& type, json payload) { return {type, std::move(payload), ++seq_}; }

void Session::record(json entry) {
  journal_.push_back(entry);
  if (on_journal) on_journal(journal_.back());
}

std::vector<WireMessage> Session::opening_messages() {
  json signs = json::array();
  for (std::size_t l = 0; l < config_.n_signs; ++l) signs.push_back(sign_name(l));
  std::vector<WireMessage> out;
  out.push_back(make("session_created", {{"session_id", id_},
                                         {"schema_version", kWireSchemaVersion},
                                         {"phase", to_string(phase_)},
                                         {"condition", config_.condition},
                                         {"n_objects", data_.n_objects()},
                                         {"n_categories", kCategories},
                                         {"n_rounds", config_.schedule.n_rounds},
                                         {"objects_per_round", config_.schedule.objects_per_round},
                                         {"signs", signs}}));
  out.push_back(make("stimuli", stimuli_payload()));
  return out;
}

json Session::stimuli_payload() const {
  json items = json::array();
  const auto descriptors = render_descriptors(data_.view_human);
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    json d = descriptors[i];
    d["object"] = i;
    items.push_back(std::move(d));
  }
  return json{{"stimuli", std::move(items)}};
}

void Session::validate_labels(const Labels& labels) const {
  if (labels.size() != data_.n_objects()) throw ShapeError("categorization needs one label per object");
  for (Label l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= kCategories) throw ShapeError("category label out of range");
  }
}

Side Session::current_speaker() const { return config_.schedule.speaker_for(step_, round_); }

std::size_t Session::current_object() const { return order_[(step_ - 1) % config_.schedule.objects_per_round]; }

void Session::start_round() {
  order_.resize(config_.schedule.objects_per_round);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

json Session::state_payload() const {
  json s{{"phase", to_string(phase_)},
         {"paused", paused_},
         {"round", round_},
         {"step", step_},
         {"total_steps", config_.schedule.total_interactions()},
         {"n_events", events_.size()}};
  if (phase_ != SessionPhase::kInitialCategorization) s["labels"] = human_labels();
  if (phase_ == SessionPhase::kNaming) {
    if (pending_) {
      s["expect"] = {{"type", "decision"}, {"object", pending_->object}, {"sign", pending_->sign},
                     {"seq", pending_->seq}};
    } else if (current_speaker() == Side::kB) {
      s["expect"] = {{"type", "proposal"}, {"object", current_object()}, {"seq", prompt_seq_}};
    }
  }
  return s;
}

std::vector<WireMessage> Session::prompt() {
  std::vector<WireMessage> out;
  if (phase_ != SessionPhase::kNaming) return out;
  const std::size_t object = current_object();
  if (current_speaker() == Side::kB) {
    WireMessage m = make("state_sync", state_payload());
    prompt_seq_ = m.seq;
    m.payload["expect"] = {{"type", "proposal"}, {"object", object}, {"seq", m.seq}};
    out.push_back(std::move(m));
    return out;
  }
  const Eigen::VectorXd p = speaker_proposal_distribution(object, dyad_.agent_a);
  const auto sign = static_cast<Label>(sample_categorical(std::span<const double>(p.data(), p.size()), rng_));
  WireMessage m = make("propose", {{"object", object},
                                   {"sign", sign},
                                   {"proposer", dyad_.id_a},
                                   {"round", round_},
                                   {"step", step_}});
  pending_ = PendingProposal{object, sign, dyad_.id_a, m.seq};
  out.push_back(std::move(m));
  return out;
}

std::vector<WireMessage> Session::submit_initial_categorization(const Labels& labels, std::int64_t now_ms) {
  if (phase_ != SessionPhase::kInitialCategorization) throw ProtocolError("initial categorization already submitted");
  validate_labels(labels);
  record({{"kind", "categorize_initial"}, {"labels", labels}, {"time", now_ms}});
  dyad_.agent_b.categories = labels;
  dyad_.agent_b.signs = labels;
  initial_labels_ = labels;
  phase_ = SessionPhase::kNaming;
  round_ = 1;
  step_ = 1;
  last_activity_ms_ = now_ms;
  start_round();
  return prompt();
}

std::vector<WireMessage> Session::handle(const WireMessage& message, std::int64_t now_ms) {
  try {
    if (phase_ == SessionPhase::kFinished) {
      return {make("error", {{"code", "finished"}, {"message", "session is finished"}})};
    }
    if (paused_) return {make("error", {{"code", "paused"}, {"message", "session is paused; reconnect to resume"}})};
    const json& p = message.payload;
    if (message.type == "categorize") {
      if (!p.contains("labels")) throw ShapeError("categorize needs 'labels'");
      const Labels labels = p.at("labels").get<Labels>();
      if (phase_ == SessionPhase::kInitialCategorization) return submit_initial_categorization(labels, now_ms);
      return apply_recategorization(labels, now_ms);
    }
    if (phase_ != SessionPhase::kNaming) throw ProtocolError("submit the initial categorization first");
    if (message.type == "propose") {
      if (pending_ || current_speaker() != Side::kB) return sync("not_your_turn");
      if (message.seq != prompt_seq_) return sync("stale_seq");
      if (!p.contains("object") || !p.contains("sign")) throw ShapeError("propose needs 'object' and 'sign'");
      if (p.at("object").get<std::size_t>() != current_object()) return sync("wrong_object");
      const auto sign = p.at("sign").get<Label>();
      if (sign < 0 || static_cast<std::size_t>(sign) >= config_.n_signs) throw ShapeError("sign out of range");
      return apply_human_proposal(sign, now_ms);
    }
    if (message.type == "decision") {
      if (!pending_) return sync("no_pending_proposal");
      if (message.seq != pending_->seq) return sync("stale_seq");
      if (!p.contains("accepted") || !p.at("accepted").is_boolean()) throw ShapeError("decision needs boolean 'accepted'");
      return apply_human_decision(p.at("accepted").get<bool>(), now_ms);
    }
    throw ProtocolError("unknown message type '" + message.type + "'");
  } catch (const Error& e) {
    return {make("error", {{"code", "invalid"}, {"message", e.what()}})};
  } catch (const json::exception& e) {
    return {make("error", {{"code", "invalid"}, {"message", e.what()}})};
  }
}

std::vector<WireMessage> Session::apply_human_proposal(Label sign, std::int64_t now_ms) {
  const std::size_t object = current_object();
  record({{"kind", "propose"}, {"object", object}, {"sign", sign}, {"time", now_ms}});
  AgentState& agent = dyad_.agent_a;
  const MhProbability r = mh_acceptance(agent, object, sign);
  GameEvent e;
  e.step = step_;
  e.round = round_;
  e.object = object;
  e.speaker_id = dyad_.id_b;
  e.listener_id = dyad_.id_a;
  e.proposed_sign = sign;
  e.speaker_sign = dyad_.agent_b.signs[object];
  e.listener_prior_sign = agent.signs[object];
  e.mh_probability = r.value;
  e.mh_note = r.note;
  e.accepted = listener_decide(dyad_.strategy_a, r.value, rng_);
  e.decision_source = dyad_.strategy_a.code();
  if (e.accepted) agent.signs[object] = sign;
  std::vector<WireMessage> out;
  out.push_back(make("decision", {{"object", object}, {"sign", sign}, {"accepted", e.accepted},
                                  {"listener", dyad_.id_a}, {"step", step_}}));
  auto rest = finish_interaction(std::move(e), now_ms);
  out.insert(out.end(), std::make_move_iterator(rest.begin()), std::make_move_iterator(rest.end()));
  return out;
}

std::vector<WireMessage> Session::apply_human_decision(bool accepted, std::int64_t now_ms) {
  const PendingProposal proposal = *pending_;
  record({{"kind", "decision"}, {"accepted", accepted}, {"time", now_ms}});
  AgentState& human = dyad_.agent_b;
  GameEvent e;
  e.step = step_;
  e.round = round_;
  e.object = proposal.object;
  e.speaker_id = dyad_.id_a;
  e.listener_id = dyad_.id_b;
  e.proposed_sign = proposal.sign;
  e.speaker_sign = dyad_.agent_a.signs[proposal.object];
  e.listener_prior_sign = human.signs[proposal.object];
  e.mh_note = "human_listener";  // r is inferred offline at export
  e.accepted = accepted;
  e.decision_source = "human";
  if (accepted) {
    human.signs[proposal.object] = proposal.sign;
    human.categories[proposal.object] = proposal.sign;
  }
  pending_.reset();
  std::vector<WireMessage> out;
  out.push_back(make("categorize", {{"optional", true}, {"object", proposal.object}, {"labels", human.categories}}));
  auto rest = finish_interaction(std::move(e), now_ms);
  out.insert(out.end(), std::make_move_iterator(rest.begin()), std::make_move_iterator(rest.end()));
  return out;
}

std::vector<WireMessage> Session::apply_recategorization(const Labels& labels, std::int64_t now_ms) {
  validate_labels(labels);
  record({{"kind", "categorize"}, {"labels", labels}, {"time", now_ms}});
  dyad_.agent_b.categories = labels;
  dyad_.agent_b.signs = labels;
  last_activity_ms_ = now_ms;
  return {make("state_sync", state_payload())};
}

std::vector<WireMessage> Session::finish_interaction(GameEvent event, std::int64_t now_ms) {
  const GameSchedule& s = config_.schedule;
  const bool round_end = step_ % s.objects_per_round == 0;
  if (s.update_timing == UpdateTiming::kPerInteraction || round_end) {
    for (std::size_t i = 0; i < s.sweeps_per_interaction; ++i) {
      gibbs_sweep_agent(dyad_.agent_a, dyad_.observations_a, dyad_.priors_a, rng_);
    }
  }
  event.timestamp_ms = now_ms;
  event.post_state_digest = dyad_.digest();
  event.post_categories_a = dyad_.agent_a.categories;
  event.post_signs_a = dyad_.agent_a.signs;
  event.post_categories_b = dyad_.agent_b.categories;
  event.post_signs_b = dyad_.agent_b.signs;
  events_.push_back(std::move(event));
  last_activity_ms_ = now_ms;

  if (round_end && round_ == s.n_rounds) {
    phase_ = SessionPhase::kFinished;
    return {make("finished", {{"n_events", events_.size()}, {"export", "/sessions/" + id_ + "/export"}})};
  }
  ++step_;
  if (round_end) {
    ++round_;
    start_round();
  }
  return prompt();
}

bool Session::check_timeout(std::int64_t now_ms) {
  if (phase_ != SessionPhase::kNaming || paused_) return false;
  if (now_ms - last_activity_ms_ <= config_.timeout_ms) return false;
  paused_ = true;
  record({{"kind", "pause"}, {"time", now_ms}});
  return true;
}

std::vector<WireMessage> Session::resume(std::int64_t now_ms) {
  if (paused_) {
    paused_ = false;
    record({{"kind", "resume"}, {"time", now_ms}});
    last_activity_ms_ = now_ms;
  }
  return sync();
}

std::vector<WireMessage> Session::sync(const std::string& rejected_reason) {
  json payload = state_payload();
  if (!rejected_reason.empty()) payload["rejected"] = rejected_reason;
  std::vector<WireMessage> out{make("state_sync", std::move(payload))};
  if (pending_ && !paused_) {
    // Re-issue the open proposal under its original seq so the echo still matches.
    out.push_back({"propose",
                   {{"object", pending_->object},
                    {"sign", pending_->sign},
                    {"proposer", pending_->proposer},
                    {"round", round_},
                    {"step", step_},
                    {"reissued", true}},
                   pending_->seq});
  }
  return out;
}

json Session::export_bundle() const {
  const bool finished = phase_ == SessionPhase::kFinished;
  std::vector<GameEvent> events = events_;
  const ModelDims dims = session_dims(config_, data_.n_objects());
  if (!events.empty() && !initial_labels_.empty()) {
    infer_listener_mh_probabilities(events, dyad_.id_b, Side::kB, initial_labels_, dyad_.observations_b, dims,
                                    dyad_.priors_b, config_.inference_sweeps, derive_seed(config_.seed, 3));
  }
  json b{{"session_id", id_},
         {"schema_version", kWireSchemaVersion},
         {"event_schema_version", kEventSchemaVersion},
         {"phase", to_string(phase_)},
         {"incomplete", !finished},
         {"config", config_},
         {"n_events", events.size()},
         {"initial_labels", initial_labels_},
         {"agent_init_digest", digest_hex(agent_init_digest_)},
         {"final_state_digest", digest_hex(digest())},
         {"events", events}};
  if (!finished) return b;

  // Ground truth and the journal (which embeds the dataset) only after the end.
  b["ground_truth_labels"] = data_.labels;
  b["journal"] = journal_;
  const auto ari = ari_trajectory(data_.labels, agent_initial_categories_, initial_labels_, events);
  json trajectory = json::array();
  for (const auto& p : ari) {
    trajectory.push_back({{"step", p.step}, {"round", p.round}, {"agent", p.agent}, {"human", p.partner}});
  }
  json metrics{{"initial_ari_agent", ari.front().agent},
               {"final_ari_agent", ari.back().agent},
               {"initial_ari_human", ari.front().partner},
               {"final_ari_human", ari.back().partner},
               {"ari_trajectory", trajectory}};
  const std::size_t window = std::min(kAgreementWindow, config_.schedule.n_rounds);
  ExperimentConfig ec;
  ec.n_categories = kCategories;
  ec.n_signs = config_.n_signs;
  ec.model = config_.model;
  const JointPosteriorEstimate target = run_target(ec, data_, derive_seed(config_.seed, 5));
  const std::size_t N = data_.n_objects();
  const auto hist_a = sign_histograms(events, window, dyad_.id_a, N, config_.n_signs);
  const auto hist_b = sign_histograms(events, window, dyad_.id_b, N, config_.n_signs);
  metrics["agreement_agent"] = agreement_score(hist_a.counts, target.sign_marginals).score;
  metrics["agreement_human"] = agreement_score(hist_b.counts, target.sign_marginals).score;
  metrics["agreement_window_rounds"] = window;
  metrics["acceptance_human"] = acceptance_json(events, dyad_.id_b);
  metrics["acceptance_agent"] = acceptance_json(events, dyad_.id_a);
  b["metrics"] = metrics;
  return b;
}

Session Session::replay(const std::vector<json>& journal) {
  if (journal.empty() || journal.front().value("kind", "") != "create") {
    throw ProtocolError("journal must start with a create entry");
  }
  const json& c = journal.front();
  std::istringstream csv(c.at("dataset_csv").get<std::string>());
  Session s(c.at("id").get<std::string>(), c.at("config").get<SessionConfig>(), read_stimulus_csv(csv),
            c.at("time").get<std::int64_t>());
  for (std::size_t i = 1; i < journal.size(); ++i) {
    const json& e = journal[i];
    const std::string kind = e.value("kind", "");
    const auto time = e.at("time").get<std::int64_t>();
    auto expect_no_error = [&](const std::vector<WireMessage>& out) {
      for (const auto& m : out) {
        if (m.type == "error" || (m.type == "state_sync" && m.payload.contains("rejected"))) {
          throw ProtocolError("journal entry " + std::to_string(i) + " (" + kind + ") does not apply");
        }
      }
    };
    if (kind == "categorize_initial") {
      s.submit_initial_categorization(e.at("labels").get<Labels>(), time);
    } else if (kind == "propose") {
      expect_no_error(s.handle({"propose", {{"object", e.at("object")}, {"sign", e.at("sign")}}, s.prompt_seq_}, time));
    } else if (kind == "decision") {
      const std::uint64_t seq = s.pending_ ? s.pending_->seq : 0;
      expect_no_error(s.handle({"decision", {{"accepted", e.at("accepted")}}, seq}, time));
    } else if (kind == "categorize") {
      expect_no_error(s.handle({"categorize", {{"labels", e.at("labels")}}, 0}, time));
    } else if (kind == "pause") {
      if (s.phase_ != SessionPhase::kNaming || s.paused_) throw ProtocolError("journal: pause does not apply");
      s.paused_ = true;
      s.record(e);
    } else if (kind == "resume") {
      s.resume(time);
    } else {
      throw ProtocolError("journal: unknown entry kind '" + kind + "'");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// SessionManager

SessionManager::SessionManager(fs::path data_dir, ClockFn clock)
    : data_dir_(std::move(data_dir)), clock_(clock ? std::move(clock) : ClockFn(system_now_ms)) {
  fs::create_directories(data_dir_ / "sessions");
}

std::string SessionManager::new_id() {
  static thread_local std::random_device device;
  std::uniform_int_distribution<std::uint64_t> dist;
  std::mt19937_64 gen((static_cast<std::uint64_t>(device()) << 32) ^ device());
  for (;;) {
    const std::string id = digest_hex(dist(gen) ^ (++id_counter_ * 0x9E3779B97F4A7C15ULL));
    if (!sessions_.contains(id) && !fs::exists(data_dir_ / "sessions" / id)) return id;
  }
}

void SessionManager::attach_journal(Slot& slot) {
  const fs::path path = data_dir_ / "sessions" / slot.session.id() / "journal.jsonl";
  slot.session.on_journal = [path](const json& entry) {
    std::ofstream out(path, std::ios::app);
    out << entry.dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot append to " + path.string());
  };
}

SessionManager::Created SessionManager::create(const SessionConfig& config) {
  StimulusSet data = resolve_dataset(config.dataset, datasets_dir());
  std::lock_guard lock(mutex_);
  const std::string id = new_id();
  auto slot = std::make_shared<Slot>(Session(id, config, std::move(data), now()));
  const fs::path dir = data_dir_ / "sessions" / id;
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "journal.jsonl", std::ios::trunc);
    for (const auto& entry : slot->session.journal()) out << entry.dump() << '\n';
    if (!out) throw Error("cannot write journal for session " + id);
  }
  attach_journal(*slot);
  Created created{id, slot->session.opening_messages()};
  sessions_.emplace(id, std::move(slot));
  return created;
}

std::size_t SessionManager::restore() {
  std::size_t restored = 0;
  const fs::path root = data_dir_ / "sessions";
  for (const auto& entry : fs::directory_iterator(root)) {
    const fs::path path = entry.path() / "journal.jsonl";
    if (!entry.is_directory() || !fs::exists(path)) continue;
    const std::string id = entry.path().filename().string();
    {
      std::lock_guard lock(mutex_);
      if (sessions_.contains(id)) continue;
    }
    std::vector<json> journal;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) break;  // a torn final line from a crash
      journal.push_back(std::move(j));
    }
    Session session = Session::replay(journal);
    // Rewrite so a discarded torn line does not linger.
    {
      std::ofstream out(path, std::ios::trunc);
      for (const auto& e : session.journal()) out << e.dump() << '\n';
    }
    auto slot = std::make_shared<Slot>(std::move(session));
    attach_journal(*slot);
    if (slot->session.phase() == SessionPhase::kNaming && !slot->session.paused()) {
      slot->session.check_timeout(std::numeric_limits<std::int64_t>::max());
    }
    std::lock_guard lock(mutex_);
    sessions_.emplace(id, std::move(slot));
    ++restored;
  }
  return restored;
}

std::shared_ptr<SessionManager::Slot> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("no session '" + id + "'");
  return it->second;
}

bool SessionManager::exists(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return sessions_.contains(id);
}

std::vector<std::string> SessionManager::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, slot] : sessions_) out.push_back(id);
  return out;
}

std::vector<WireMessage> SessionManager::submit_initial_categorization(const std::string& id, const Labels& labels) {
  return with_session(id, [&](Session& s) { return s.submit_initial_categorization(labels, now()); });
}

std::vector<WireMessage> SessionManager::handle(const std::string& id, const WireMessage& message) {
  return with_session(id, [&](Session& s) {
    const std::int64_t t = now();
    s.check_timeout(t);
    return s.handle(message, t);
  });
}

std::vector<WireMessage> SessionManager::resume(const std::string& id) {
  return with_session(id, [&](Session& s) { return s.resume(now()); });
}

std::size_t SessionManager::sweep_timeouts() {
  std::size_t paused = 0;
  for (const auto& id : ids()) {
    try {
      if (with_session(id, [&](Session& s) { return s.check_timeout(now()); })) ++paused;
    } catch (const NotFound&) {
    }
  }
  return paused;
}

json SessionManager::export_session(const std::string& id, bool allow_incomplete) {
  return with_session(id, [&](Session& s) {
    if (s.phase() != SessionPhase::kFinished && !allow_incomplete) {
      throw ProtocolError("session is not finished; pass allow_incomplete to export anyway");
    }
    json bundle = s.export_bundle();
    const fs::path dir = data_dir_ / "sessions" / id / "export";
    fs::create_directories(dir);
    {
      std::ofstream out(dir / "events.jsonl", std::ios::trunc);
      write_event_log(out, bundle.at("events").get<std::vector<GameEvent>>());
    }
    {
      std::ofstream out(dir / "metrics.json", std::ios::trunc);
      json m = bundle.value("metrics", json::object());
      m["incomplete"] = bundle.at("incomplete");
      m["session_id"] = id;
      out << m.dump(2) << '\n';
    }
    return bundle;
  });
}

}  // namespace mhng
