// mhng: batch driver for naming-game experiments and the live session server.
//
//   mhng generate [--config f] [--spec spec.json] [--seed n] --out dir
//   mhng simulate [--config f] [--seed n] [--out dir] [--conditions MH,AA,AR] [--n-seeds n] [--jobs n]
//   mhng report <run dir>
//   mhng serve [--port p] [--data-dir dir]
//   mhng kl [--steps n] [--chains n] [--seed n]

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mhng/errors.hpp"
#include "mhng/experiment.hpp"
#include "mhng/metrics.hpp"
#include "mhng/random.hpp"
#include "mhng/service/server.hpp"

namespace {

using nlohmann::json;

struct Overrides {
  std::string config_file;
  std::vector<std::string> set;  // key=value
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> conditions;
  std::optional<std::size_t> n_seeds;
  std::optional<std::size_t> jobs;
};

void add_config_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_file, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.set, "extra key=value override (repeatable)");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("-o,--out", o.out, "output directory");
}

mhng::ExperimentConfig build_config(const Overrides& o) {
  mhng::ExperimentConfig config = o.config_file.empty() ? mhng::ExperimentConfig{} : mhng::load_config_file(o.config_file);
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw mhng::ConfigError("--set expects key=value, got '" + kv + "'");
    mhng::apply_config_value(config, kv.substr(0, eq), kv.substr(eq + 1), std::filesystem::current_path());
  }
  if (o.seed) config.seed = *o.seed;
  if (o.out) config.out_dir = *o.out;
  if (o.conditions) mhng::apply_config_value(config, "conditions", *o.conditions);
  if (o.n_seeds) config.n_seeds = *o.n_seeds;
  if (o.jobs) config.jobs = *o.jobs;
  return config;
}

int run_generate(const Overrides& o, const std::string& spec_path, std::size_t samples) {
  mhng::ExperimentConfig config = build_config(o);
  if (!spec_path.empty()) mhng::apply_config_value(config, "spec", spec_path, std::filesystem::current_path());
  if (o.seed) config.spec.seed = *o.seed;
  const auto diag = mhng::cmd_generate(config.spec, config.out_dir, samples);
  std::printf("wrote %s/dataset.csv and dataset.json\n", config.out_dir.string().c_str());
  std::printf("bayes accuracy  human-view %.4f  agent-view %.4f  joint %.4f  gap %.4f  (%zu samples)\n",
              diag.human_view_accuracy, diag.agent_view_accuracy, diag.joint_accuracy, diag.gap(), diag.n_samples);
  return 0;
}

int run_simulate(const Overrides& o) {
  const mhng::ExperimentConfig config = build_config(o);
  const std::size_t runs = mhng::cmd_simulate(config);
  std::printf("%zu runs written to %s\n", runs, config.out_dir.string().c_str());
  return 0;
}

int run_report(const std::string& dir) {
  const mhng::MetricsReport report = mhng::cmd_report(dir);
  std::printf("%-8s %5s  %-17s %-17s %-17s\n", "cond", "runs", "final ARI agent", "final ARI partner",
              "agreement agent");
  for (const auto& c : report.conditions) {
    std::printf("%-8s %5zu  %.3f +- %.3f     %.3f +- %.3f     %.3f +- %.3f\n", c.condition.c_str(), c.n_runs,
                c.final_ari_agent.mean, c.final_ari_agent.sd, c.final_ari_partner.mean, c.final_ari_partner.sd,
                c.agreement_agent.mean, c.agreement_agent.sd);
  }
  for (const auto& t : report.comparisons) {
    std::printf("%-18s %-4s vs %-4s t=%8.3f dof=%7.2f p=%.4g%s\n", t.metric.c_str(), t.group_a.c_str(),
                t.group_b.c_str(), t.test.statistic, t.test.dof, t.test.p_value,
                t.test.corrected ? " (Bonferroni)" : "");
  }
  std::printf("report written to %s/report.json\n", dir.c_str());
  return 0;
}

mhng::service::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) std::thread([] { g_server->stop(); }).detach();
}

int run_serve(std::optional<std::uint16_t> port, std::optional<std::string> data_dir) {
  auto config = mhng::service::ServerConfig::from_env();
  if (port) config.port = *port;
  if (data_dir) config.data_dir = *data_dir;
  mhng::service::Server server(config);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto bound = server.start();
  std::printf("serving on %s:%u, data in %s (%zu sessions restored)\n", config.bind_address.c_str(),
              static_cast<unsigned>(bound), config.data_dir.string().c_str(), server.manager().ids().size());
  std::fflush(stdout);
  server.run();
  g_server = nullptr;
  return 0;
}

// Frozen N=3, K=L=2 instance with asymmetric theta; prints the KL trace.
int run_kl(std::size_t steps, std::size_t chains, std::uint64_t seed) {
  mhng::ModelDims dims;
  dims.n_objects = 3;
  dims.n_categories = 2;
  dims.n_signs = 2;
  dims.obs_dim = 3;
  mhng::PriorConfig priors;
  priors.niw_mean = Eigen::VectorXd::Zero(3);
  priors.niw_scale = Eigen::MatrixXd::Identity(3, 3);
  priors.niw_dof = 5.0;
  mhng::Rng rng(seed);
  mhng::AgentState a = mhng::sample_initial_state(dims, priors, rng);
  mhng::AgentState b = mhng::sample_initial_state(dims, priors, rng);
  a.theta << 0.8, 0.2, 0.3, 0.7;  // rows: P(c | s)
  b.theta << 0.6, 0.4, 0.1, 0.9;
  a.categories = {0, 1, 0};
  b.categories = {0, 1, 1};
  const auto trace = mhng::frozen_kl_trace(a, b, steps, chains, mhng::derive_seed(seed, 1));
  std::printf("step,kl\n");
  for (std::size_t t = 0; t < trace.kl.size(); ++t) std::printf("%zu,%.6f\n", t, trace.kl[t]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metropolis-Hastings naming game experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(MHNG_VERSION));

  Overrides gen_o;
  std::string spec_path;
  std::size_t samples = 100000;
  auto* gen = app.add_subcommand("generate", "write a stimulus dataset and its overlap diagnostics");
  add_config_options(gen, gen_o);
  gen->add_option("--spec", spec_path, "ground-truth spec JSON (default: shipped spec)")->check(CLI::ExistingFile);
  gen->add_option("--samples", samples, "Monte Carlo samples for the overlap diagnostics");

  Overrides sim_o;
  auto* sim = app.add_subcommand("simulate", "run agent-agent games for every condition and seed");
  add_config_options(sim, sim_o);
  sim->add_option("--conditions", sim_o.conditions, "comma list from MH, AA, AR (or LB:a,b)");
  sim->add_option("--n-seeds", sim_o.n_seeds, "replicates per condition");
  sim->add_option("-j,--jobs", sim_o.jobs, "worker threads");

  std::string run_dir;
  auto* rep = app.add_subcommand("report", "aggregate a simulate output directory");
  rep->add_option("run_dir", run_dir, "directory written by simulate")->required()->check(CLI::ExistingDirectory);

  std::optional<std::uint16_t> port;
  std::optional<std::string> data_dir;
  auto* serve = app.add_subcommand("serve", "HTTP/WebSocket server for live sessions");
  serve->add_option("-p,--port", port, "listen port (env MHNG_PORT)");
  serve->add_option("--data-dir", data_dir, "session journals and datasets (env MHNG_DATA_DIR)");

  std::size_t steps = 60;
  std::size_t chains = 1000;
  std::uint64_t kl_seed = 1;
  auto* kl = app.add_subcommand("kl", "KL trace of a frozen two-agent MH game (N=3, K=L=2)");
  kl->add_option("--steps", steps, "interactions");
  kl->add_option("--chains", chains, "independent chains");
  kl->add_option("--seed", kl_seed, "seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return run_generate(gen_o, spec_path, samples);
    if (*sim) return run_simulate(sim_o);
    if (*rep) return run_report(run_dir);
    if (*serve) return run_serve(port, data_dir);
    if (*kl) return run_kl(steps, chains, kl_seed);
  } catch (const mhng::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
