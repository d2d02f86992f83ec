#pragma once

// Batch experiments: agent-agent dyads across listener conditions and seeds,
// their on-disk layout, and the aggregate report built from a run directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mhng/behavior.hpp"
#include "mhng/metrics.hpp"
#include "mhng/model.hpp"
#include "mhng/protocol.hpp"
#include "mhng/stimuli.hpp"

namespace mhng {

/// How an Inter-GM agent perceives its view and which priors it uses.
/// Views are z-scored per column before modelling, so the NIW scale is in
/// units of each feature's spread across the N objects.
struct AgentModelConfig {
  double alpha_theta = 0.1;
  double alpha_pi = 1.0;
  double niw_kappa = 1.0;
  double niw_dof = 25.0;
  double niw_scale = 5.0;  // Psi0 = niw_scale * I
  bool standardize = true;
  std::size_t agent_init_sweeps = 3;     // computational agent's unsupervised start
  std::size_t partner_init_sweeps = 50;  // batch stand-in for the human's first sort

  Observations perceive(const Eigen::MatrixXd& view) const;
  /// m0 is the column mean of the perceived observations.
  PriorConfig priors_for(const Observations& perceived) const;
  void validate() const;
};

/// Schedule keys: n_rounds, objects_per_round, role_rule ("interaction" or
/// "round"), first_speaker ("agent" = side A, "partner" = side B),
/// sweeps_per_interaction, update_timing ("interaction" or "round").
void to_json(nlohmann::json& j, const GameSchedule& s);
void from_json(const nlohmann::json& j, GameSchedule& s);

void to_json(nlohmann::json& j, const AgentModelConfig& c);
void from_json(const nlohmann::json& j, AgentModelConfig& c);

struct ExperimentConfig {
  GroundTruthSpec spec = GroundTruthSpec::builtin_default();
  /// Stimulus CSV shared by every seed. Empty: each seed draws its own
  /// dataset from `spec`, seeded from the master seed and the seed index.
  std::string dataset_path;
  std::vector<std::string> conditions{"MH", "AA", "AR"};
  std::string partner = "MH";  // listener strategy of the human stand-in
  std::size_t n_seeds = 50;
  std::uint64_t seed = 1;
  std::size_t n_categories = 3;
  std::size_t n_signs = 3;
  GameSchedule schedule;
  AgentModelConfig model;
  JointGibbsConfig target;
  std::size_t agreement_window = 5;
  std::size_t acceptance_bins = 10;
  std::filesystem::path out_dir = "runs";
  std::size_t jobs = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Sets one key of the key-value config format. Keys: spec (path to a spec
/// JSON), spec_seed, n_objects, dataset, conditions (comma separated),
/// partner, n_seeds, seed, n_categories, n_signs, n_rounds, role_rule,
/// first_speaker, sweeps_per_interaction, update_timing, alpha_theta,
/// alpha_pi, niw_kappa, niw_dof, niw_scale, standardize, agent_init_sweeps,
/// partner_init_sweeps, target_runs, target_sweeps, target_burn_in,
/// agreement_window, acceptance_bins, out, jobs. Relative paths resolve
/// against `base_dir`. Throws ConfigError for unknown keys or bad values.
void apply_config_value(ExperimentConfig& config, const std::string& key, const std::string& value,
                        const std::filesystem::path& base_dir = {});

/// `key = value` lines; blank lines and '#' comments are ignored.
ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {},
                                   ExperimentConfig base = {});
ExperimentConfig load_config_file(const std::filesystem::path& path);

struct RunSeeds {
  std::uint64_t dataset = 0;
  std::uint64_t init = 0;
  std::uint64_t game = 0;
  std::uint64_t target = 0;
};

/// Seeds for one replicate. They depend on the master seed and the seed
/// index only, so every condition sees the same data and starting dyad.
RunSeeds run_seeds(std::uint64_t master, std::size_t seed_index);

struct RunSetup {
  std::string condition;
  std::size_t seed_index = 0;
  RunSeeds seeds;
  StimulusSet data;
  Dyad dyad;  // initial state, ready for run_game / replay_game
};

/// Dataset for a replicate: `shared` when given, else generated from the spec.
StimulusSet run_dataset(const ExperimentConfig& config, std::size_t seed_index, const StimulusSet* shared = nullptr);

/// Builds the initial dyad: side A is the computational agent listening with
/// `condition`, side B the stand-in listening with `config.partner`.
RunSetup prepare_run(const ExperimentConfig& config, const std::string& condition, std::size_t seed_index,
                     const StimulusSet* shared = nullptr);

struct AriPoint {
  std::size_t step = 0;  // 0 = initial categorization
  std::size_t round = 0;
  double agent = 0.0;
  double partner = 0.0;
};

std::vector<AriPoint> ari_trajectory(const Labels& truth, const Labels& initial_a, const Labels& initial_b,
                                     std::span<const GameEvent> events);

struct RunOutcome {
  RunSetup setup;
  GameResult game;
  std::vector<AriPoint> ari;
};

RunOutcome simulate_run(const ExperimentConfig& config, const std::string& condition, std::size_t seed_index,
                        const StimulusSet* shared = nullptr);

/// Target sign marginals for a replicate, from the joint Gibbs sampler on
/// both perceived views.
JointPosteriorEstimate run_target(const ExperimentConfig& config, const StimulusSet& data, std::uint64_t seed);

/// Writes <out>/dataset.csv and <out>/dataset.json for `spec` and returns the
/// Monte Carlo overlap diagnostics.
OverlapDiagnostics cmd_generate(const GroundTruthSpec& spec, const std::filesystem::path& out,
                                std::size_t n_diagnostic_samples = 100000);

/// Runs every condition x seed, writing <out>/<condition>/events-<i>.jsonl,
/// ari-<i>.csv, dataset-<i>.csv and <out>/manifest.json. Returns the number of
/// runs written.
std::size_t cmd_simulate(const ExperimentConfig& config);

struct RunMetrics {
  std::string condition;
  std::size_t seed_index = 0;
  double initial_ari_agent = 0.0;
  double final_ari_agent = 0.0;
  double initial_ari_partner = 0.0;
  double final_ari_partner = 0.0;
  double agreement_agent = 0.0;
  double agreement_partner = 0.0;
};

struct ConditionSummary {
  std::string condition;
  std::size_t n_runs = 0;
  Summary initial_ari_agent;
  Summary final_ari_agent;
  Summary initial_ari_partner;
  Summary final_ari_partner;
  Summary agreement_agent;
  Summary agreement_partner;
  std::vector<double> mean_ari_agent;  // by step, 0..T
  std::vector<double> mean_ari_partner;
};

struct Comparison {
  std::string metric;
  std::string group_a;
  std::string group_b;
  bool pre_specified = true;
  TTestResult test;
};

struct AcceptanceSummary {
  std::string condition;
  std::string listener_id;
  std::string decision_source;
  std::size_t n_samples = 0;
  FitResult pooled;
  Summary per_run_a;
  Summary per_run_b;
  std::vector<AcceptanceBin> bins;
};

struct MetricsReport {
  std::vector<RunMetrics> runs;
  std::vector<ConditionSummary> conditions;
  std::vector<Comparison> comparisons;
  std::vector<AcceptanceSummary> acceptance;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

/// Per-run metrics from one simulated game.
RunMetrics run_metrics(const ExperimentConfig& config, const std::string& condition, std::size_t seed_index,
                       const StimulusSet& data, std::span<const GameEvent> events,
                       std::span<const AriPoint> ari);

/// Welch tests for MH-vs-AA and MH-vs-AR (pre-specified) and AA-vs-AR with a
/// Bonferroni factor of 3, on final ARI and agreement for both sides. Pairs
/// with a missing condition or fewer than two runs are skipped.
std::vector<Comparison> condition_comparisons(std::span<const RunMetrics> runs);

/// Aggregates per-run metrics and acceptance behaviour; pure in its inputs.
MetricsReport build_report(const ExperimentConfig& config, std::span<const RunMetrics> runs,
                           const std::vector<std::vector<AriPoint>>& trajectories,
                           const std::vector<std::vector<GameEvent>>& logs);

/// Reads a directory written by cmd_simulate, writes report.json,
/// summary.csv and ari_by_step.csv into it, and returns the report.
MetricsReport cmd_report(const std::filesystem::path& run_dir);

/// KL trace on an enumerable frozen instance: `n_chains` MH-MH games with
/// theta, phi and c fixed, each agent's initial signs drawn from its own
/// P(s | c). q^m_t is the law of agent m's whole sign vector across chains
/// after t interactions; entry t is sum_m KL(q^m_t || p), which equals
/// KL(q^A_t x q^B_t || p x p).
struct KlTrace {
  std::vector<double> kl;  // length n_steps + 1
  std::size_t n_chains = 0;
};

KlTrace frozen_kl_trace(const AgentState& a, const AgentState& b, std::size_t n_steps, std::size_t n_chains,
                        std::uint64_t seed);

/// Single-line FNV-1a digest of a byte string, hex encoded.
std::string content_digest(const std::string& bytes);

}  // namespace mhng
