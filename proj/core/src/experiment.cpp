#include "mhng/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "mhng/errors.hpp"
#include "mhng/random.hpp"

#ifndef MHNG_VERSION
#define MHNG_VERSION "0.0.0"
#endif

namespace mhng {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << bytes;
  if (!out) throw ConfigError("write failed for " + path.string());
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* role_rule_name(RoleRule r) { return r == RoleRule::kPerInteraction ? "interaction" : "round"; }
const char* timing_name(UpdateTiming t) { return t == UpdateTiming::kPerInteraction ? "interaction" : "round"; }

RoleRule parse_role_rule(const std::string& s) {
  if (s == "interaction") return RoleRule::kPerInteraction;
  if (s == "round") return RoleRule::kPerRound;
  throw ConfigError("role_rule must be 'interaction' or 'round', got '" + s + "'");
}

UpdateTiming parse_timing(const std::string& s) {
  if (s == "interaction") return UpdateTiming::kPerInteraction;
  if (s == "round") return UpdateTiming::kPerRound;
  throw ConfigError("update_timing must be 'interaction' or 'round', got '" + s + "'");
}

ModelDims dims_for(const ExperimentConfig& config, std::size_t n_objects) {
  ModelDims dims;
  dims.n_objects = n_objects;
  dims.n_categories = config.n_categories;
  dims.n_signs = config.n_signs;
  dims.obs_dim = 3;
  return dims;
}

fs::path condition_dir(const fs::path& root, const std::string& condition) {
  // "LB:0.6,0.2" is not a friendly directory name.
  std::string name = condition;
  std::replace(name.begin(), name.end(), ':', '_');
  std::replace(name.begin(), name.end(), ',', '_');
  return root / name;
}

std::string ari_csv(std::span<const AriPoint> points) {
  std::string out = "step,round,ari_agent,ari_partner\n";
  for (const auto& p : points) {
    out += std::to_string(p.step) + "," + std::to_string(p.round) + "," + fmt(p.agent) + "," + fmt(p.partner) + "\n";
  }
  return out;
}

std::vector<AriPoint> parse_ari_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "step,round,ari_agent,ari_partner") throw ShapeError("ARI CSV: unexpected header");
  std::vector<AriPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    AriPoint p;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw ShapeError("ARI CSV: expected 4 columns");
    p.step = std::stoull(cells[0]);
    p.round = std::stoull(cells[1]);
    p.agent = std::stod(cells[2]);
    p.partner = std::stod(cells[3]);
    points.push_back(p);
  }
  return points;
}

json summary_json(const Summary& s) { return json{{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}}; }

json fit_json(const FitResult& f) {
  return json{{"a", f.a},       {"b", f.b},
              {"nll", f.nll},   {"n_samples", f.n_samples},
              {"iterations", f.iterations}, {"converged", f.converged},
              {"degenerate", f.degenerate}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

Observations AgentModelConfig::perceive(const Eigen::MatrixXd& view) const {
  return standardize ? standardize_columns(view) : view;
}

PriorConfig AgentModelConfig::priors_for(const Observations& perceived) const {
  PriorConfig p;
  p.alpha_theta = alpha_theta;
  p.alpha_pi = alpha_pi;
  p.niw_mean = perceived.colwise().mean().transpose();
  p.niw_kappa = niw_kappa;
  p.niw_dof = niw_dof;
  p.niw_scale = niw_scale * Eigen::MatrixXd::Identity(perceived.cols(), perceived.cols());
  return p;
}

void AgentModelConfig::validate() const {
  if (!(alpha_theta > 0.0) || !(alpha_pi > 0.0)) throw ConfigError("Dirichlet concentrations must be > 0");
  if (!(niw_kappa > 0.0)) throw ConfigError("niw_kappa must be > 0");
  if (!(niw_dof > 2.0)) throw ConfigError("niw_dof must exceed obs_dim - 1 = 2");
  if (!(niw_scale > 0.0)) throw ConfigError("niw_scale must be > 0");
}

void to_json(json& j, const GameSchedule& s) {
  j = json{{"n_rounds", s.n_rounds},
           {"objects_per_round", s.objects_per_round},
           {"role_rule", role_rule_name(s.role_rule)},
           {"first_speaker", s.first_speaker == Side::kA ? "agent" : "partner"},
           {"sweeps_per_interaction", s.sweeps_per_interaction},
           {"update_timing", timing_name(s.update_timing)}};
}

void from_json(const json& j, GameSchedule& s) {
  s = GameSchedule{};
  s.n_rounds = j.value("n_rounds", s.n_rounds);
  s.objects_per_round = j.value("objects_per_round", s.objects_per_round);
  s.role_rule = parse_role_rule(j.value("role_rule", std::string("interaction")));
  const std::string first = j.value("first_speaker", std::string("partner"));
  if (first != "agent" && first != "partner") throw ConfigError("first_speaker must be 'agent' or 'partner'");
  s.first_speaker = first == "agent" ? Side::kA : Side::kB;
  s.sweeps_per_interaction = j.value("sweeps_per_interaction", s.sweeps_per_interaction);
  s.update_timing = parse_timing(j.value("update_timing", std::string("interaction")));
}

void to_json(json& j, const AgentModelConfig& c) {
  j = json{{"alpha_theta", c.alpha_theta},
           {"alpha_pi", c.alpha_pi},
           {"niw_kappa", c.niw_kappa},
           {"niw_dof", c.niw_dof},
           {"niw_scale", c.niw_scale},
           {"standardize", c.standardize},
           {"agent_init_sweeps", c.agent_init_sweeps},
           {"partner_init_sweeps", c.partner_init_sweeps}};
}

void from_json(const json& j, AgentModelConfig& c) {
  c = AgentModelConfig{};
  c.alpha_theta = j.value("alpha_theta", c.alpha_theta);
  c.alpha_pi = j.value("alpha_pi", c.alpha_pi);
  c.niw_kappa = j.value("niw_kappa", c.niw_kappa);
  c.niw_dof = j.value("niw_dof", c.niw_dof);
  c.niw_scale = j.value("niw_scale", c.niw_scale);
  c.standardize = j.value("standardize", c.standardize);
  c.agent_init_sweeps = j.value("agent_init_sweeps", c.agent_init_sweeps);
  c.partner_init_sweeps = j.value("partner_init_sweeps", c.partner_init_sweeps);
}

void ExperimentConfig::validate() const {
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (conditions.empty()) throw ConfigError("conditions must not be empty");
  std::set<std::string> seen;
  for (const auto& c : conditions) {
    const auto strategy = ListenerStrategy::parse(c);
    if (strategy.kind == StrategyKind::kExternal) throw ConfigError("batch conditions cannot be 'human'");
    if (!seen.insert(c).second) throw ConfigError("duplicate condition '" + c + "'");
  }
  if (ListenerStrategy::parse(partner).kind == StrategyKind::kExternal) {
    throw ConfigError("the batch partner needs a scripted strategy (MH, AA, AR or LB:a,b)");
  }
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (n_categories < 1 || n_signs < 1) throw ConfigError("n_categories and n_signs must be >= 1");
  if (agreement_window < 1 || agreement_window > schedule.n_rounds) {
    throw ConfigError("agreement_window must lie in [1, n_rounds]");
  }
  if (acceptance_bins < 1) throw ConfigError("acceptance_bins must be >= 1");
  model.validate();
  target.validate();
  if (dataset_path.empty()) {
    spec.validate();
    schedule.validate(spec.n_objects);
  }
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"spec", c.spec},
           {"dataset_path", c.dataset_path},
           {"conditions", c.conditions},
           {"partner", c.partner},
           {"n_seeds", c.n_seeds},
           {"seed", c.seed},
           {"n_categories", c.n_categories},
           {"n_signs", c.n_signs},
           {"schedule", c.schedule},
           {"model", c.model},
           {"target", {{"n_runs", c.target.n_runs}, {"n_sweeps", c.target.n_sweeps}, {"burn_in", c.target.burn_in}}},
           {"agreement_window", c.agreement_window},
           {"acceptance_bins", c.acceptance_bins},
           {"out_dir", c.out_dir.string()},
           {"jobs", c.jobs}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("spec")) c.spec = j.at("spec").get<GroundTruthSpec>();
  c.dataset_path = j.value("dataset_path", c.dataset_path);
  if (j.contains("conditions")) c.conditions = j.at("conditions").get<std::vector<std::string>>();
  c.partner = j.value("partner", c.partner);
  c.n_seeds = j.value("n_seeds", c.n_seeds);
  c.seed = j.value("seed", c.seed);
  c.n_categories = j.value("n_categories", c.n_categories);
  c.n_signs = j.value("n_signs", c.n_signs);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<GameSchedule>();
  if (j.contains("model")) c.model = j.at("model").get<AgentModelConfig>();
  if (j.contains("target")) {
    const auto& t = j.at("target");
    c.target.n_runs = t.value("n_runs", c.target.n_runs);
    c.target.n_sweeps = t.value("n_sweeps", c.target.n_sweeps);
    c.target.burn_in = t.value("burn_in", c.target.burn_in);
  }
  c.agreement_window = j.value("agreement_window", c.agreement_window);
  c.acceptance_bins = j.value("acceptance_bins", c.acceptance_bins);
  c.out_dir = j.value("out_dir", c.out_dir.string());
  c.jobs = j.value("jobs", c.jobs);
}

// ---------------------------------------------------------------------------
// Single runs

RunSeeds run_seeds(std::uint64_t master, std::size_t seed_index) {
  const std::uint64_t base = derive_seed(master, seed_index);
  return {derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3), derive_seed(base, 4)};
}

StimulusSet run_dataset(const ExperimentConfig& config, std::size_t seed_index, const StimulusSet* shared) {
  if (shared != nullptr) return *shared;
  GroundTruthSpec spec = config.spec;
  spec.seed = run_seeds(config.seed, seed_index).dataset;
  return generate_dataset(spec);
}

RunSetup prepare_run(const ExperimentConfig& config, const std::string& condition, std::size_t seed_index,
                     const StimulusSet* shared) {
  RunSetup setup;
  setup.condition = condition;
  setup.seed_index = seed_index;
  setup.seeds = run_seeds(config.seed, seed_index);
  setup.data = run_dataset(config, seed_index, shared);
  const ModelDims dims = dims_for(config, setup.data.n_objects());

  Dyad& d = setup.dyad;
  d.observations_a = config.model.perceive(setup.data.view_agent);
  d.observations_b = config.model.perceive(setup.data.view_human);
  d.priors_a = config.model.priors_for(d.observations_a);
  d.priors_b = config.model.priors_for(d.observations_b);
  Rng rng(setup.seeds.init);
  d.agent_a = initialize_agent_categorization(d.observations_a, dims, d.priors_a, config.model.agent_init_sweeps, rng);
  d.agent_b =
      initialize_agent_categorization(d.observations_b, dims, d.priors_b, config.model.partner_init_sweeps, rng);
  d.agent_a.rng_seed = setup.seeds.init;
  d.agent_b.rng_seed = setup.seeds.init;
  d.schedule = config.schedule;
  d.strategy_a = ListenerStrategy::parse(condition);
  d.strategy_b = ListenerStrategy::parse(config.partner);
  d.validate();
  return setup;
}

std::vector<AriPoint> ari_trajectory(const Labels& truth, const Labels& initial_a, const Labels& initial_b,
                                     std::span<const GameEvent> events) {
  std::vector<AriPoint> points;
  points.reserve(events.size() + 1);
  points.push_back({0, 0, adjusted_rand_index(initial_a, truth), adjusted_rand_index(initial_b, truth)});
  for (const auto& e : events) {
    points.push_back({e.step, e.round, adjusted_rand_index(e.post_categories_a, truth),
                      adjusted_rand_index(e.post_categories_b, truth)});
  }
  return points;
}

RunOutcome simulate_run(const ExperimentConfig& config, const std::string& condition, std::size_t seed_index,
                        const StimulusSet* shared) {
  RunOutcome out;
  out.setup = prepare_run(config, condition, seed_index, shared);
  Rng rng(out.setup.seeds.game);
  out.game = run_game(out.setup.dyad, rng);
  out.ari = ari_trajectory(out.setup.data.labels, out.setup.dyad.agent_a.categories,
                           out.setup.dyad.agent_b.categories, out.game.events);
  return out;
}

JointPosteriorEstimate run_target(const ExperimentConfig& config, const StimulusSet& data, std::uint64_t seed) {
  const Observations a = config.model.perceive(data.view_agent);
  const Observations b = config.model.perceive(data.view_human);
  Rng rng(seed);
  return joint_gibbs_posterior(a, b, dims_for(config, data.n_objects()), config.model.priors_for(a),
                               config.model.priors_for(b), config.target, rng);
}

// ---------------------------------------------------------------------------
// Commands

OverlapDiagnostics cmd_generate(const GroundTruthSpec& spec, const fs::path& out, std::size_t n_diagnostic_samples) {
  spec.validate();
  fs::create_directories(out);
  const StimulusSet set = generate_dataset(spec);
  std::ostringstream csv;
  write_stimulus_csv(csv, set);
  write_file(out / "dataset.csv", csv.str());
  const OverlapDiagnostics diag = estimate_bayes_accuracy(spec, n_diagnostic_samples, derive_seed(spec.seed, 1));
  json sidecar = stimulus_sidecar(spec);
  sidecar["overlap"] = {{"human_view_accuracy", diag.human_view_accuracy},
                        {"agent_view_accuracy", diag.agent_view_accuracy},
                        {"joint_accuracy", diag.joint_accuracy},
                        {"gap", diag.gap()},
                        {"n_samples", diag.n_samples}};
  write_file(out / "dataset.json", sidecar.dump(2) + "\n");
  return diag;
}

std::string content_digest(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return digest_hex(h);
}

std::size_t cmd_simulate(const ExperimentConfig& config) {
  config.validate();
  std::optional<StimulusSet> shared;
  std::string shared_digest;
  if (!config.dataset_path.empty()) {
    const std::string text = read_file(config.dataset_path);
    std::istringstream in(text);
    shared = read_stimulus_csv(in);
    shared_digest = content_digest(text);
    config.schedule.validate(shared->n_objects());
  }
  fs::create_directories(config.out_dir);
  for (const auto& c : config.conditions) fs::create_directories(condition_dir(config.out_dir, c));

  const std::size_t n_tasks = config.conditions.size() * config.n_seeds;
  std::vector<json> entries(n_tasks);
  parallel_for(n_tasks, config.jobs, [&](std::size_t task) {
    const std::string& condition = config.conditions[task / config.n_seeds];
    const std::size_t seed_index = task % config.n_seeds;
    const RunOutcome run = simulate_run(config, condition, seed_index, shared ? &*shared : nullptr);
    const fs::path dir = condition_dir(config.out_dir, condition);
    const std::string idx = std::to_string(seed_index);

    std::ostringstream events;
    write_event_log(events, run.game.events);
    std::ostringstream data;
    write_stimulus_csv(data, run.setup.data);
    write_file(dir / ("events-" + idx + ".jsonl"), events.str());
    write_file(dir / ("ari-" + idx + ".csv"), ari_csv(run.ari));
    write_file(dir / ("dataset-" + idx + ".csv"), data.str());

    entries[task] = json{{"condition", condition},
                         {"seed_index", seed_index},
                         {"seeds",
                          {{"dataset", run.setup.seeds.dataset},
                           {"init", run.setup.seeds.init},
                           {"game", run.setup.seeds.game},
                           {"target", run.setup.seeds.target}}},
                         {"dataset_digest", content_digest(data.str())},
                         {"events_digest", content_digest(events.str())},
                         {"final_state_digest", digest_hex(run.game.final_dyad.digest())}};
  });

  json manifest{{"tool", "mhng"},
                {"version", MHNG_VERSION},
                {"event_schema_version", kEventSchemaVersion},
                {"config", config},
                {"runs", entries}};
  if (shared) manifest["input_dataset_digest"] = shared_digest;
  write_file(config.out_dir / "manifest.json", manifest.dump(2) + "\n");
  return n_tasks;
}

// ---------------------------------------------------------------------------
// Report

RunMetrics run_metrics(const ExperimentConfig& config, const std::string& condition, std::size_t seed_index,
                       const StimulusSet& data, std::span<const GameEvent> events, std::span<const AriPoint> ari) {
  if (ari.empty()) throw ShapeError("run_metrics: empty ARI trajectory");
  RunMetrics m;
  m.condition = condition;
  m.seed_index = seed_index;
  m.initial_ari_agent = ari.front().agent;
  m.initial_ari_partner = ari.front().partner;
  m.final_ari_agent = ari.back().agent;
  m.final_ari_partner = ari.back().partner;

  const JointPosteriorEstimate target = run_target(config, data, run_seeds(config.seed, seed_index).target);
  const std::size_t N = data.n_objects();
  const Dyad ids;  // default ids: side A "agent", side B "human"
  const auto hist_a = sign_histograms(events, config.agreement_window, ids.id_a, N, config.n_signs);
  const auto hist_b = sign_histograms(events, config.agreement_window, ids.id_b, N, config.n_signs);
  m.agreement_agent = agreement_score(hist_a.counts, target.sign_marginals).score;
  m.agreement_partner = agreement_score(hist_b.counts, target.sign_marginals).score;
  return m;
}

std::vector<Comparison> condition_comparisons(std::span<const RunMetrics> runs) {
  using Getter = double (*)(const RunMetrics&);
  const std::vector<std::pair<std::string, Getter>> metrics{
      {"final_ari_agent", [](const RunMetrics& r) { return r.final_ari_agent; }},
      {"agreement_agent", [](const RunMetrics& r) { return r.agreement_agent; }},
      {"final_ari_partner", [](const RunMetrics& r) { return r.final_ari_partner; }},
      {"agreement_partner", [](const RunMetrics& r) { return r.agreement_partner; }},
  };
  // Comparisons involving MH are pre-specified; AA vs AR is corrected for
  // the three pairwise tests.
  const std::vector<std::tuple<std::string, std::string, bool>> pairs{
      {"MH", "AA", true}, {"MH", "AR", true}, {"AA", "AR", false}};
  std::vector<Comparison> out;
  for (const auto& [name, get] : metrics) {
    for (const auto& [ga, gb, pre] : pairs) {
      std::vector<double> a, b;
      for (const auto& r : runs) {
        if (r.condition == ga) a.push_back(get(r));
        if (r.condition == gb) b.push_back(get(r));
      }
      if (a.size() < 2 || b.size() < 2) continue;
      Comparison c;
      c.metric = name;
      c.group_a = ga;
      c.group_b = gb;
      c.pre_specified = pre;
      c.test = welch_t_test(a, b, pre ? 1.0 : 3.0);
      out.push_back(c);
    }
  }
  return out;
}

MetricsReport build_report(const ExperimentConfig& config, std::span<const RunMetrics> runs,
                           const std::vector<std::vector<AriPoint>>& trajectories,
                           const std::vector<std::vector<GameEvent>>& logs) {
  if (trajectories.size() != runs.size() || logs.size() != runs.size()) {
    throw ShapeError("build_report: runs, trajectories and logs must align");
  }
  MetricsReport report;
  report.runs.assign(runs.begin(), runs.end());

  for (const auto& condition : config.conditions) {
    ConditionSummary s;
    s.condition = condition;
    std::vector<double> ia, fa, ip, fp, ga, gp;
    std::vector<double> sum_a, sum_p;
    std::vector<std::size_t> count;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& r = runs[i];
      if (r.condition != condition) continue;
      ia.push_back(r.initial_ari_agent);
      fa.push_back(r.final_ari_agent);
      ip.push_back(r.initial_ari_partner);
      fp.push_back(r.final_ari_partner);
      ga.push_back(r.agreement_agent);
      gp.push_back(r.agreement_partner);
      const auto& traj = trajectories[i];
      if (traj.size() > sum_a.size()) {
        sum_a.resize(traj.size(), 0.0);
        sum_p.resize(traj.size(), 0.0);
        count.resize(traj.size(), 0);
      }
      for (std::size_t t = 0; t < traj.size(); ++t) {
        sum_a[t] += traj[t].agent;
        sum_p[t] += traj[t].partner;
        ++count[t];
      }
    }
    s.n_runs = fa.size();
    s.initial_ari_agent = summarize(ia);
    s.final_ari_agent = summarize(fa);
    s.initial_ari_partner = summarize(ip);
    s.final_ari_partner = summarize(fp);
    s.agreement_agent = summarize(ga);
    s.agreement_partner = summarize(gp);
    for (std::size_t t = 0; t < count.size(); ++t) {
      s.mean_ari_agent.push_back(sum_a[t] / static_cast<double>(count[t]));
      s.mean_ari_partner.push_back(sum_p[t] / static_cast<double>(count[t]));
    }
    report.conditions.push_back(std::move(s));
  }

  report.comparisons = condition_comparisons(runs);

  // Acceptance behaviour of every listener whose decisions depend on r.
  const Dyad ids;
  for (const auto& condition : config.conditions) {
    for (const std::string& listener : {ids.id_a, ids.id_b}) {
      std::vector<AcceptanceSample> pooled;
      std::vector<double> per_a, per_b;
      std::string source;
      for (std::size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].condition != condition) continue;
        std::vector<AcceptanceSample> mine;
        for (const auto& e : logs[i]) {
          if (e.listener_id != listener || !e.mh_probability) continue;
          if (e.decision_source != "MH" && e.decision_source != "LB") continue;
          source = e.decision_source;
          mine.push_back({*e.mh_probability, e.accepted});
        }
        if (mine.size() >= 2) {
          const FitResult f = fit_linear_bernoulli(mine);
          per_a.push_back(f.a);
          per_b.push_back(f.b);
        }
        pooled.insert(pooled.end(), mine.begin(), mine.end());
      }
      if (pooled.empty()) continue;
      AcceptanceSummary a;
      a.condition = condition;
      a.listener_id = listener;
      a.decision_source = source;
      a.n_samples = pooled.size();
      a.pooled = fit_linear_bernoulli(pooled);
      a.per_run_a = summarize(per_a);
      a.per_run_b = summarize(per_b);
      a.bins = binned_acceptance(pooled, config.acceptance_bins);
      report.acceptance.push_back(std::move(a));
    }
  }
  return report;
}

void to_json(json& j, const MetricsReport& r) {
  j = json::object();
  json runs = json::array();
  for (const auto& m : r.runs) {
    runs.push_back({{"condition", m.condition},
                    {"seed_index", m.seed_index},
                    {"initial_ari_agent", m.initial_ari_agent},
                    {"final_ari_agent", m.final_ari_agent},
                    {"initial_ari_partner", m.initial_ari_partner},
                    {"final_ari_partner", m.final_ari_partner},
                    {"agreement_agent", m.agreement_agent},
                    {"agreement_partner", m.agreement_partner}});
  }
  json conditions = json::array();
  for (const auto& s : r.conditions) {
    conditions.push_back({{"condition", s.condition},
                          {"n_runs", s.n_runs},
                          {"initial_ari_agent", summary_json(s.initial_ari_agent)},
                          {"final_ari_agent", summary_json(s.final_ari_agent)},
                          {"initial_ari_partner", summary_json(s.initial_ari_partner)},
                          {"final_ari_partner", summary_json(s.final_ari_partner)},
                          {"agreement_agent", summary_json(s.agreement_agent)},
                          {"agreement_partner", summary_json(s.agreement_partner)},
                          {"mean_ari_agent_by_step", s.mean_ari_agent},
                          {"mean_ari_partner_by_step", s.mean_ari_partner}});
  }
  json comparisons = json::array();
  for (const auto& c : r.comparisons) {
    comparisons.push_back({{"metric", c.metric},
                           {"group_a", c.group_a},
                           {"group_b", c.group_b},
                           {"pre_specified", c.pre_specified},
                           {"statistic", c.test.statistic},
                           {"dof", c.test.dof},
                           {"p_value", c.test.p_value},
                           {"levene_p", c.test.levene_p},
                           {"corrected", c.test.corrected},
                           {"correction", c.test.correction},
                           {"correction_factor", c.test.correction_factor}});
  }
  json acceptance = json::array();
  for (const auto& a : r.acceptance) {
    json bins = json::array();
    for (const auto& b : a.bins) {
      bins.push_back({{"lower", b.lower},
                      {"upper", b.upper},
                      {"mean_r", b.mean_r},
                      {"rate", b.rate ? json(*b.rate) : json(nullptr)},
                      {"count", b.count}});
    }
    acceptance.push_back({{"condition", a.condition},
                          {"listener_id", a.listener_id},
                          {"decision_source", a.decision_source},
                          {"n_samples", a.n_samples},
                          {"pooled_fit", fit_json(a.pooled)},
                          {"per_run_a", summary_json(a.per_run_a)},
                          {"per_run_b", summary_json(a.per_run_b)},
                          {"bins", bins}});
  }
  j["runs"] = runs;
  j["conditions"] = conditions;
  j["comparisons"] = comparisons;
  j["acceptance"] = acceptance;
}

MetricsReport cmd_report(const fs::path& run_dir) {
  const fs::path manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw ConfigError("no manifest.json in " + run_dir.string());
  const json manifest = json::parse(read_file(manifest_path));
  const ExperimentConfig config = manifest.at("config").get<ExperimentConfig>();

  const std::size_t n_tasks = config.conditions.size() * config.n_seeds;
  std::vector<RunMetrics> runs(n_tasks);
  std::vector<std::vector<AriPoint>> trajectories(n_tasks);
  std::vector<std::vector<GameEvent>> logs(n_tasks);
  parallel_for(n_tasks, config.jobs, [&](std::size_t task) {
    const std::string& condition = config.conditions[task / config.n_seeds];
    const std::size_t seed_index = task % config.n_seeds;
    const fs::path dir = condition_dir(run_dir, condition);
    const std::string idx = std::to_string(seed_index);
    const fs::path events_path = dir / ("events-" + idx + ".jsonl");
    if (!fs::exists(events_path)) throw ConfigError("missing event log " + events_path.string());
    std::istringstream events_in(read_file(events_path));
    logs[task] = read_event_log(events_in);
    std::istringstream data_in(read_file(dir / ("dataset-" + idx + ".csv")));
    const StimulusSet data = read_stimulus_csv(data_in);
    trajectories[task] = parse_ari_csv(read_file(dir / ("ari-" + idx + ".csv")));
    runs[task] = run_metrics(config, condition, seed_index, data, logs[task], trajectories[task]);
  });

  MetricsReport report = build_report(config, runs, trajectories, logs);
  write_file(run_dir / "report.json", json(report).dump(2) + "\n");

  std::string summary =
      "condition,n_runs,initial_ari_agent_mean,initial_ari_agent_sd,final_ari_agent_mean,final_ari_agent_sd,"
      "initial_ari_partner_mean,initial_ari_partner_sd,final_ari_partner_mean,final_ari_partner_sd,"
      "agreement_agent_mean,agreement_agent_sd,agreement_partner_mean,agreement_partner_sd\n";
  std::string by_step = "condition,step,mean_ari_agent,mean_ari_partner\n";
  for (const auto& s : report.conditions) {
    summary += s.condition + "," + std::to_string(s.n_runs);
    for (const Summary* m : {&s.initial_ari_agent, &s.final_ari_agent, &s.initial_ari_partner, &s.final_ari_partner,
                             &s.agreement_agent, &s.agreement_partner}) {
      summary += "," + fmt(m->mean) + "," + fmt(m->sd);
    }
    summary += "\n";
    for (std::size_t t = 0; t < s.mean_ari_agent.size(); ++t) {
      by_step += s.condition + "," + std::to_string(t) + "," + fmt(s.mean_ari_agent[t]) + "," +
                 fmt(s.mean_ari_partner[t]) + "\n";
    }
  }
  std::string tests = "metric,group_a,group_b,pre_specified,statistic,dof,p_value,levene_p,correction,factor\n";
  for (const auto& c : report.comparisons) {
    tests += c.metric + "," + c.group_a + "," + c.group_b + "," + (c.pre_specified ? "true" : "false") + "," +
             fmt(c.test.statistic) + "," + fmt(c.test.dof) + "," + fmt(c.test.p_value) + "," + fmt(c.test.levene_p) +
             "," + c.test.correction + "," + fmt(c.test.correction_factor) + "\n";
  }
  std::string bins = "condition,listener_id,lower,upper,mean_r,rate,count\n";
  for (const auto& a : report.acceptance) {
    for (const auto& b : a.bins) {
      bins += a.condition + "," + a.listener_id + "," + fmt(b.lower) + "," + fmt(b.upper) + "," + fmt(b.mean_r) + "," +
              (b.rate ? fmt(*b.rate) : std::string()) + "," + std::to_string(b.count) + "\n";
    }
  }
  write_file(run_dir / "summary.csv", summary);
  write_file(run_dir / "ari_by_step.csv", by_step);
  write_file(run_dir / "tests.csv", tests);
  write_file(run_dir / "acceptance_bins.csv", bins);
  return report;
}

// ---------------------------------------------------------------------------
// KL trace

KlTrace frozen_kl_trace(const AgentState& a, const AgentState& b, std::size_t n_steps, std::size_t n_chains,
                        std::uint64_t seed) {
  if (n_chains < 1) throw ConfigError("frozen_kl_trace: need at least one chain");
  const JointSignDistribution target = enumerate_sign_posterior(a, b);
  const std::size_t N = a.n_objects();
  const std::size_t L = a.n_signs();
  const std::size_t states = target.probs.size();

  Dyad dyad;
  dyad.agent_a = a;
  dyad.agent_b = b;
  dyad.observations_a = Observations::Zero(static_cast<Eigen::Index>(N), a.phi.front().mean.size());
  dyad.observations_b = Observations::Zero(static_cast<Eigen::Index>(N), b.phi.front().mean.size());
  dyad.schedule.objects_per_round = N;
  dyad.schedule.n_rounds = std::max<std::size_t>(1, (n_steps + N - 1) / N);
  dyad.schedule.sweeps_per_interaction = 0;
  dyad.strategy_a = ListenerStrategy::metropolis_hastings();
  dyad.strategy_b = ListenerStrategy::metropolis_hastings();

  auto index_of = [L](const Labels& s) {
    std::size_t idx = 0, mult = 1;
    for (Label v : s) {
      idx += static_cast<std::size_t>(v) * mult;
      mult *= L;
    }
    return idx;
  };

  std::vector<std::vector<double>> counts_a(n_steps + 1, std::vector<double>(states, 0.0));
  std::vector<std::vector<double>> counts_b = counts_a;
  for (std::size_t chain = 0; chain < n_chains; ++chain) {
    Rng rng(derive_seed(seed, chain));
    Dyad d = dyad;
    for (AgentState* agent : {&d.agent_a, &d.agent_b}) {
      for (std::size_t n = 0; n < N; ++n) {
        const Eigen::VectorXd p = speaker_proposal_distribution(n, *agent);
        agent->signs[n] = static_cast<Label>(sample_categorical(std::span<const double>(p.data(), p.size()), rng));
      }
    }
    counts_a[0][index_of(d.agent_a.signs)] += 1.0;
    counts_b[0][index_of(d.agent_b.signs)] += 1.0;
    GameOptions options;
    options.on_event = [&](const GameEvent& e, const Dyad& now) {
      if (e.step > n_steps) return;
      counts_a[e.step][index_of(now.agent_a.signs)] += 1.0;
      counts_b[e.step][index_of(now.agent_b.signs)] += 1.0;
    };
    run_game(d, rng, options);
  }

  KlTrace trace;
  trace.n_chains = n_chains;
  JointSignDistribution q{N, L, std::vector<double>(states)};
  for (std::size_t t = 0; t <= n_steps; ++t) {
    double kl = 0.0;
    for (const auto* counts : {&counts_a[t], &counts_b[t]}) {
      for (std::size_t i = 0; i < states; ++i) q.probs[i] = (*counts)[i] / static_cast<double>(n_chains);
      kl += joint_kl(q, target);
    }
    trace.kl.push_back(kl);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Key-value config files

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(value, &used));
    } else {
      if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(value, &used));
    }
    if (used != value.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("config key '" + key + "': bad value '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false");
}

}  // namespace

void apply_config_value(ExperimentConfig& c, const std::string& key, const std::string& value,
                        const fs::path& base_dir) {
  auto path = [&](const std::string& v) { return fs::path(v).is_absolute() ? fs::path(v) : base_dir / v; };
  auto size = [&] { return parse_number<std::size_t>(key, value); };
  auto real = [&] { return parse_number<double>(key, value); };
  if (key == "spec") {
    c.spec = json::parse(read_file(path(value))).get<GroundTruthSpec>();
    c.schedule.objects_per_round = c.spec.n_objects;
  } else if (key == "spec_seed") {
    c.spec.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "n_objects") {
    c.spec.n_objects = size();
    c.schedule.objects_per_round = c.spec.n_objects;
  } else if (key == "dataset") {
    c.dataset_path = value.empty() ? std::string() : path(value).string();
  } else if (key == "conditions") {
    c.conditions.clear();
    std::istringstream in(value);
    std::string item;
    // LB:<a>,<b> contains a comma itself, so glue its second half back on.
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      if (!c.conditions.empty() && c.conditions.back().starts_with("LB:") &&
          c.conditions.back().find(',') == std::string::npos) {
        c.conditions.back() += "," + item;
      } else {
        c.conditions.push_back(item);
      }
    }
  } else if (key == "partner") {
    c.partner = value;
  } else if (key == "n_seeds") {
    c.n_seeds = size();
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "n_categories") {
    c.n_categories = size();
  } else if (key == "n_signs") {
    c.n_signs = size();
  } else if (key == "n_rounds") {
    c.schedule.n_rounds = size();
  } else if (key == "role_rule") {
    c.schedule.role_rule = parse_role_rule(value);
  } else if (key == "first_speaker") {
    if (value != "agent" && value != "partner") throw ConfigError("first_speaker must be 'agent' or 'partner'");
    c.schedule.first_speaker = value == "agent" ? Side::kA : Side::kB;
  } else if (key == "sweeps_per_interaction") {
    c.schedule.sweeps_per_interaction = size();
  } else if (key == "update_timing") {
    c.schedule.update_timing = parse_timing(value);
  } else if (key == "alpha_theta") {
    c.model.alpha_theta = real();
  } else if (key == "alpha_pi") {
    c.model.alpha_pi = real();
  } else if (key == "niw_kappa") {
    c.model.niw_kappa = real();
  } else if (key == "niw_dof") {
    c.model.niw_dof = real();
  } else if (key == "niw_scale") {
    c.model.niw_scale = real();
  } else if (key == "standardize") {
    c.model.standardize = parse_bool(key, value);
  } else if (key == "agent_init_sweeps") {
    c.model.agent_init_sweeps = size();
  } else if (key == "partner_init_sweeps") {
    c.model.partner_init_sweeps = size();
  } else if (key == "target_runs") {
    c.target.n_runs = size();
  } else if (key == "target_sweeps") {
    c.target.n_sweeps = size();
  } else if (key == "target_burn_in") {
    c.target.burn_in = size();
  } else if (key == "agreement_window") {
    c.agreement_window = size();
  } else if (key == "acceptance_bins") {
    c.acceptance_bins = size();
  } else if (key == "out") {
    c.out_dir = path(value);
  } else if (key == "jobs") {
    c.jobs = size();
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

ExperimentConfig parse_config_text(const std::string& text, const fs::path& base_dir, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), base_dir);
  }
  return base;
}

ExperimentConfig load_config_file(const fs::path& path) {
  return parse_config_text(read_file(path), path.parent_path());
}

}  // namespace mhng
