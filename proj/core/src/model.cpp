#include "mhng/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "mhng/errors.hpp"
#include "mhng/metrics.hpp"

namespace mhng {
namespace {

constexpr double kProbabilityFloor = 1e-300;

double safe_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

// Cholesky-derived pieces of one component, reused across objects in a sweep.
struct ComponentCache {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
  double log_norm = 0.0;  // -d/2 log(2 pi) + 1/2 log det(precision)

  explicit ComponentCache(const GaussianComponent& comp) : mean(comp.mean), precision(comp.precision) {
    if (precision.rows() != precision.cols() || precision.rows() != mean.size()) {
      throw ShapeError("GaussianComponent: mean and precision dimensions differ");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
      throw ParameterError("GaussianComponent: precision is not positive definite");
    }
    const auto diag = llt.matrixLLT().diagonal();
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < diag.size(); ++i) {
      if (!(diag[i] > 0.0)) throw ParameterError("GaussianComponent: singular precision");
      log_det += 2.0 * std::log(diag[i]);
    }
    const double d = static_cast<double>(mean.size());
    log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi) + 0.5 * log_det;
  }

  double log_density(const Eigen::VectorXd& x) const {
    if (x.size() != mean.size()) throw ShapeError("observation dimension mismatch");
    const Eigen::VectorXd diff = x - mean;
    return log_norm - 0.5 * diff.dot(precision * diff);
  }
};

std::vector<ComponentCache> make_caches(const std::vector<GaussianComponent>& phi) {
  std::vector<ComponentCache> caches;
  caches.reserve(phi.size());
  for (const auto& comp : phi) caches.emplace_back(comp);
  return caches;
}

void check_label(Label v, std::size_t bound, const char* what) {
  if (v < 0 || static_cast<std::size_t>(v) >= bound) {
    throw ParameterError(std::string(what) + " index out of range");
  }
}

Label draw_category(const Eigen::VectorXd& x, Label sign, const Eigen::MatrixXd& theta,
                    const std::vector<ComponentCache>& caches, Rng& rng) {
  std::vector<double> logw(caches.size());
  for (std::size_t k = 0; k < caches.size(); ++k) {
    logw[k] = caches[k].log_density(x) + safe_log(theta(sign, static_cast<Eigen::Index>(k)));
  }
  return static_cast<Label>(sample_log_categorical(logw, rng));
}

GaussianComponent draw_niw(const PriorConfig& priors, const Observations& obs,
                           const std::vector<Eigen::Index>& members, Rng& rng) {
  const Eigen::Index d = priors.niw_mean.size();
  const double n = static_cast<double>(members.size());
  Eigen::VectorXd mean_n = priors.niw_mean;
  Eigen::MatrixXd scale_n = priors.niw_scale;
  double kappa_n = priors.niw_kappa;
  double dof_n = priors.niw_dof;
  if (!members.empty()) {
    Eigen::VectorXd xbar = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i : members) xbar += obs.row(i).transpose();
    xbar /= n;
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i : members) {
      const Eigen::VectorXd diff = obs.row(i).transpose() - xbar;
      scatter.noalias() += diff * diff.transpose();
    }
    kappa_n = priors.niw_kappa + n;
    dof_n = priors.niw_dof + n;
    mean_n = (priors.niw_kappa * priors.niw_mean + n * xbar) / kappa_n;
    const Eigen::VectorXd shift = xbar - priors.niw_mean;
    scale_n = priors.niw_scale + scatter + (priors.niw_kappa * n / kappa_n) * shift * shift.transpose();
  }
  // Sigma ~ IW(dof_n, scale_n)  <=>  Lambda ~ W(dof_n, scale_n^{-1}).
  Eigen::MatrixXd scale_inv = scale_n.llt().solve(Eigen::MatrixXd::Identity(d, d));
  scale_inv = 0.5 * (scale_inv + scale_inv.transpose());
  GaussianComponent comp;
  comp.precision = sample_wishart(dof_n, scale_inv, rng);
  comp.mean = sample_gaussian_precision(mean_n, kappa_n * comp.precision, rng);
  return comp;
}

Eigen::MatrixXd draw_theta(const Labels& signs, const Labels& categories, std::size_t n_signs,
                           std::size_t n_categories, double alpha, Rng& rng) {
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_signs),
                                                 static_cast<Eigen::Index>(n_categories));
  for (std::size_t i = 0; i < signs.size(); ++i) counts(signs[i], categories[i]) += 1.0;
  Eigen::MatrixXd theta(counts.rows(), counts.cols());
  for (Eigen::Index l = 0; l < counts.rows(); ++l) {
    const Eigen::VectorXd conc = counts.row(l).transpose().array() + alpha;
    theta.row(l) = sample_dirichlet(conc, rng).transpose();
  }
  return theta;
}

}  // namespace

void ModelDims::validate() const {
  if (n_objects < 1 || n_categories < 1 || n_signs < 1 || obs_dim < 1) {
    throw ConfigError("ModelDims: all counts must be >= 1");
  }
}

PriorConfig PriorConfig::defaults_for(const Observations& obs) {
  PriorConfig priors;
  const Eigen::Index d = obs.cols();
  priors.niw_mean = obs.rows() > 0 ? Eigen::VectorXd(obs.colwise().mean().transpose())
                                   : Eigen::VectorXd::Zero(d);
  priors.niw_dof = static_cast<double>(d) + 2.0;
  priors.niw_scale = Eigen::MatrixXd::Identity(d, d);
  return priors;
}

void PriorConfig::validate(std::size_t obs_dim) const {
  if (!(alpha_theta > 0.0) || !(alpha_pi > 0.0)) {
    throw ConfigError("PriorConfig: Dirichlet concentrations must be positive");
  }
  if (!(niw_kappa > 0.0)) throw ConfigError("PriorConfig: niw_kappa must be positive");
  const auto d = static_cast<Eigen::Index>(obs_dim);
  if (niw_mean.size() != d || niw_scale.rows() != d || niw_scale.cols() != d) {
    throw ShapeError("PriorConfig: NIW mean/scale dimension does not match obs_dim");
  }
  if (!(niw_dof > static_cast<double>(obs_dim) - 1.0)) {
    throw ConfigError("PriorConfig: niw_dof must exceed obs_dim - 1");
  }
  if (!niw_scale.isApprox(niw_scale.transpose(), 1e-12)) {
    throw ParameterError("PriorConfig: niw_scale must be symmetric");
  }
  if (Eigen::LLT<Eigen::MatrixXd>(niw_scale).info() != Eigen::Success) {
    throw ParameterError("PriorConfig: niw_scale must be positive definite");
  }
}

void AgentState::validate() const {
  const std::size_t L = n_signs();
  const std::size_t K = n_categories();
  if (static_cast<std::size_t>(theta.cols()) != K) throw ShapeError("AgentState: theta has wrong width");
  if (static_cast<std::size_t>(sign_prior.size()) != L) throw ShapeError("AgentState: pi has wrong length");
  if (signs.size() != categories.size()) throw ShapeError("AgentState: signs/categories length differ");
  for (Eigen::Index l = 0; l < theta.rows(); ++l) {
    if ((theta.row(l).array() < 0.0).any() || std::abs(theta.row(l).sum() - 1.0) > 1e-9) {
      throw ParameterError("AgentState: theta row is not a probability vector");
    }
  }
  if ((sign_prior.array() < 0.0).any() || std::abs(sign_prior.sum() - 1.0) > 1e-9) {
    throw ParameterError("AgentState: sign prior is not a probability vector");
  }
  for (Label c : categories) check_label(c, K, "category");
  for (Label s : signs) check_label(s, L, "sign");
}

void JointGibbsConfig::validate() const {
  if (n_runs < 1) throw ConfigError("JointGibbsConfig: n_runs must be >= 1");
  if (n_sweeps <= burn_in) throw ConfigError("JointGibbsConfig: n_sweeps must exceed burn_in");
}

double log_obs_likelihood(const Eigen::VectorXd& x, const GaussianComponent& comp) {
  return ComponentCache(comp).log_density(x);
}

Eigen::VectorXd category_conditional(const Eigen::VectorXd& x, Label sign, const AgentState& state) {
  check_label(sign, state.n_signs(), "sign");
  const auto caches = make_caches(state.phi);
  std::vector<double> logw(caches.size());
  for (std::size_t k = 0; k < caches.size(); ++k) {
    logw[k] = caches[k].log_density(x) + safe_log(state.theta(sign, static_cast<Eigen::Index>(k)));
  }
  const double lse = log_sum_exp(logw);
  if (!std::isfinite(lse)) throw NumericalError("category_conditional: degenerate weights");
  Eigen::VectorXd probs(static_cast<Eigen::Index>(logw.size()));
  for (std::size_t k = 0; k < logw.size(); ++k) probs[static_cast<Eigen::Index>(k)] = std::exp(logw[k] - lse);
  return probs;
}

Label sample_category(const Eigen::VectorXd& x, Label sign, const AgentState& state, Rng& rng) {
  check_label(sign, state.n_signs(), "sign");
  return draw_category(x, sign, state.theta, make_caches(state.phi), rng);
}

Eigen::MatrixXd resample_theta(const AgentState& state, const PriorConfig& priors, Rng& rng) {
  return draw_theta(state.signs, state.categories, state.n_signs(), state.n_categories(),
                    priors.alpha_theta, rng);
}

std::vector<GaussianComponent> resample_phi(const AgentState& state, const Observations& observations,
                                            const PriorConfig& priors, Rng& rng) {
  if (static_cast<std::size_t>(observations.rows()) != state.n_objects()) {
    throw ShapeError("resample_phi: observation rows differ from object count");
  }
  std::vector<std::vector<Eigen::Index>> members(state.n_categories());
  for (std::size_t i = 0; i < state.categories.size(); ++i) {
    members[static_cast<std::size_t>(state.categories[i])].push_back(static_cast<Eigen::Index>(i));
  }
  std::vector<GaussianComponent> phi;
  phi.reserve(members.size());
  for (const auto& m : members) phi.push_back(draw_niw(priors, observations, m, rng));
  return phi;
}

Eigen::VectorXd resample_sign_prior(const AgentState& state, const PriorConfig& priors, Rng& rng) {
  Eigen::VectorXd conc = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(state.n_signs()), priors.alpha_pi);
  for (Label s : state.signs) conc[s] += 1.0;
  return sample_dirichlet(conc, rng);
}

Eigen::VectorXd speaker_proposal_distribution(std::size_t object, const AgentState& state) {
  if (object >= state.n_objects()) throw ParameterError("speaker_proposal_distribution: object out of range");
  const Label c = state.categories[object];
  Eigen::VectorXd weights = state.sign_prior.cwiseProduct(state.theta.col(c));
  const double total = weights.sum();
  if (!(total > 0.0)) throw NumericalError("speaker_proposal_distribution: zero normalizer");
  return weights / total;
}

void gibbs_sweep_agent(AgentState& state, const Observations& observations, const PriorConfig& priors,
                       Rng& rng) {
  if (static_cast<std::size_t>(observations.rows()) != state.n_objects()) {
    throw ShapeError("gibbs_sweep_agent: observation rows differ from object count");
  }
  {
    const auto caches = make_caches(state.phi);
    for (std::size_t n = 0; n < state.n_objects(); ++n) {
      state.categories[n] = draw_category(observations.row(static_cast<Eigen::Index>(n)).transpose(),
                                          state.signs[n], state.theta, caches, rng);
    }
  }
  state.theta = resample_theta(state, priors, rng);
  state.phi = resample_phi(state, observations, priors, rng);
  if (priors.resample_sign_prior) state.sign_prior = resample_sign_prior(state, priors, rng);
}

AgentState sample_initial_state(const ModelDims& dims, const PriorConfig& priors, Rng& rng) {
  dims.validate();
  priors.validate(dims.obs_dim);
  AgentState state;
  const auto L = static_cast<Eigen::Index>(dims.n_signs);
  const auto K = static_cast<Eigen::Index>(dims.n_categories);
  state.sign_prior = Eigen::VectorXd::Constant(L, 1.0 / static_cast<double>(L));
  state.theta.resize(L, K);
  for (Eigen::Index l = 0; l < L; ++l) {
    state.theta.row(l) = sample_dirichlet(Eigen::VectorXd::Constant(K, priors.alpha_theta), rng).transpose();
  }
  const Observations empty(0, static_cast<Eigen::Index>(dims.obs_dim));
  for (Eigen::Index k = 0; k < K; ++k) state.phi.push_back(draw_niw(priors, empty, {}, rng));
  state.signs.resize(dims.n_objects);
  state.categories.resize(dims.n_objects);
  std::vector<double> pi(state.sign_prior.data(), state.sign_prior.data() + L);
  std::vector<double> flat(static_cast<std::size_t>(K), 1.0);
  for (std::size_t n = 0; n < dims.n_objects; ++n) {
    state.signs[n] = static_cast<Label>(sample_categorical(pi, rng));
    state.categories[n] = static_cast<Label>(sample_categorical(flat, rng));
  }
  return state;
}

namespace {

struct JointChain {
  AgentState a;
  AgentState b;
  Labels signs;
};

void sample_shared_signs(JointChain& chain, Rng& rng) {
  const auto L = chain.a.n_signs();
  std::vector<double> logw(L);
  for (std::size_t n = 0; n < chain.signs.size(); ++n) {
    for (std::size_t l = 0; l < L; ++l) {
      const auto li = static_cast<Eigen::Index>(l);
      logw[l] = safe_log(chain.a.sign_prior[li]) + safe_log(chain.a.theta(li, chain.a.categories[n])) +
                safe_log(chain.b.theta(li, chain.b.categories[n]));
    }
    chain.signs[n] = static_cast<Label>(sample_log_categorical(logw, rng));
  }
  chain.a.signs = chain.signs;
  chain.b.signs = chain.signs;
}

void sample_categories(AgentState& state, const Observations& obs, Rng& rng) {
  const auto caches = make_caches(state.phi);
  for (std::size_t n = 0; n < state.n_objects(); ++n) {
    state.categories[n] = draw_category(obs.row(static_cast<Eigen::Index>(n)).transpose(), state.signs[n],
                                        state.theta, caches, rng);
  }
}

// Aligns each run's marginals to the first run and averages them.
JointPosteriorEstimate combine_runs(std::vector<Eigen::MatrixXd> runs, const JointGibbsConfig& config,
                                    bool align) {
  const Eigen::MatrixXd& reference = runs.front();
  for (std::size_t r = 1; align && r < runs.size(); ++r) {
    const Eigen::Index L = reference.cols();
    Eigen::MatrixXd cost(L, L);
    for (Eigen::Index i = 0; i < L; ++i) {
      for (Eigen::Index j = 0; j < L; ++j) cost(i, j) = -reference.col(i).cwiseMin(runs[r].col(j)).sum();
    }
    const auto match = hungarian_match(cost);
    Eigen::MatrixXd aligned(runs[r].rows(), L);
    for (Eigen::Index i = 0; i < L; ++i) aligned.col(i) = runs[r].col(static_cast<Eigen::Index>(match.permutation[i]));
    runs[r] = aligned;
  }
  JointPosteriorEstimate est;
  est.n_gibbs_runs = runs.size();
  est.n_sweeps_per_run = config.n_sweeps;
  est.burn_in = config.burn_in;
  est.sign_marginals = Eigen::MatrixXd::Zero(reference.rows(), reference.cols());
  for (const auto& m : runs) est.sign_marginals += m;
  est.sign_marginals /= static_cast<double>(runs.size());
  est.run_standard_error = Eigen::MatrixXd::Zero(reference.rows(), reference.cols());
  if (runs.size() > 1) {
    for (const auto& m : runs) est.run_standard_error += (m - est.sign_marginals).cwiseAbs2();
    const double R = static_cast<double>(runs.size());
    est.run_standard_error = (est.run_standard_error / (R - 1.0)).cwiseSqrt() / std::sqrt(R);
  }
  return est;
}

Eigen::MatrixXd run_chain(JointChain chain, const Observations& obs_a, const Observations& obs_b,
                          const PriorConfig* priors_a, const PriorConfig* priors_b,
                          const JointGibbsConfig& config, Rng& rng) {
  const auto N = static_cast<Eigen::Index>(chain.signs.size());
  const auto L = static_cast<Eigen::Index>(chain.a.n_signs());
  Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(N, L);
  const bool update_params = priors_a != nullptr;
  for (std::size_t sweep = 0; sweep < config.n_sweeps; ++sweep) {
    sample_categories(chain.a, obs_a, rng);
    sample_categories(chain.b, obs_b, rng);
    sample_shared_signs(chain, rng);
    if (update_params) {
      chain.a.theta = resample_theta(chain.a, *priors_a, rng);
      chain.b.theta = resample_theta(chain.b, *priors_b, rng);
      chain.a.phi = resample_phi(chain.a, obs_a, *priors_a, rng);
      chain.b.phi = resample_phi(chain.b, obs_b, *priors_b, rng);
    }
    if (sweep >= config.burn_in) {
      // Sign labels are exchangeable, so a mixing chain wanders between relabelings of the same
      // partition. Map each draw onto the labels of the tally so far before counting it.
      std::vector<Eigen::Index> relabel(static_cast<std::size_t>(L));
      std::iota(relabel.begin(), relabel.end(), Eigen::Index{0});
      if (update_params && sweep > config.burn_in) {
        Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(L, L);
        for (Eigen::Index n = 0; n < N; ++n) cost.row(chain.signs[static_cast<std::size_t>(n)]) -= freq.row(n);
        const auto match = hungarian_match(cost);
        for (Eigen::Index l = 0; l < L; ++l) relabel[static_cast<std::size_t>(l)] = static_cast<Eigen::Index>(match.permutation[static_cast<std::size_t>(l)]);
      }
      for (Eigen::Index n = 0; n < N; ++n) freq(n, relabel[static_cast<std::size_t>(chain.signs[static_cast<std::size_t>(n)])]) += 1.0;
    }
  }
  return freq / static_cast<double>(config.n_sweeps - config.burn_in);
}

}  // namespace

JointPosteriorEstimate joint_gibbs_posterior(const Observations& obs_a, const Observations& obs_b,
                                             const ModelDims& dims, const PriorConfig& priors_a,
                                             const PriorConfig& priors_b, const JointGibbsConfig& config,
                                             Rng& rng) {
  config.validate();
  dims.validate();
  if (obs_a.rows() != obs_b.rows() || static_cast<std::size_t>(obs_a.rows()) != dims.n_objects) {
    throw ShapeError("joint_gibbs_posterior: observation sets must cover the same N objects");
  }
  ModelDims dims_a = dims;
  ModelDims dims_b = dims;
  dims_a.obs_dim = static_cast<std::size_t>(obs_a.cols());
  dims_b.obs_dim = static_cast<std::size_t>(obs_b.cols());
  std::vector<Eigen::MatrixXd> runs;
  for (std::size_t r = 0; r < config.n_runs; ++r) {
    JointChain chain{sample_initial_state(dims_a, priors_a, rng), sample_initial_state(dims_b, priors_b, rng),
                     Labels(dims.n_objects, 0)};
    chain.b.sign_prior = chain.a.sign_prior;
    chain.signs = chain.a.signs;
    chain.b.signs = chain.signs;
    runs.push_back(run_chain(std::move(chain), obs_a, obs_b, &priors_a, &priors_b, config, rng));
  }
  return combine_runs(std::move(runs), config, /*align=*/true);
}

JointPosteriorEstimate joint_gibbs_posterior_frozen(const AgentState& a, const AgentState& b,
                                                    const Observations& obs_a, const Observations& obs_b,
                                                    const JointGibbsConfig& config, Rng& rng) {
  config.validate();
  a.validate();
  b.validate();
  if (a.n_objects() != b.n_objects() || a.n_signs() != b.n_signs()) {
    throw ShapeError("joint_gibbs_posterior_frozen: agents disagree on N or L");
  }
  std::vector<Eigen::MatrixXd> runs;
  for (std::size_t r = 0; r < config.n_runs; ++r) {
    JointChain chain{a, b, a.signs};
    chain.b.signs = chain.signs;
    runs.push_back(run_chain(std::move(chain), obs_a, obs_b, nullptr, nullptr, config, rng));
  }
  // Frozen parameters fix the labels, so no alignment is needed.
  return combine_runs(std::move(runs), config, /*align=*/false);
}

std::uint64_t state_digest(const Labels& categories_a, const Labels& signs_a, const Labels& categories_b,
                           const Labels& signs_b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (v >> (8 * byte)) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  };
  for (const Labels* vec : {&categories_a, &signs_a, &categories_b, &signs_b}) {
    mix(vec->size());
    for (Label v : *vec) mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
  }
  return h;
}

}  // namespace mhng
