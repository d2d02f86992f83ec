#pragma once

// Inter-GM: a shared sign s_n generates each agent's private category
// c_n ~ Cat(theta_{s_n}), which generates the agent's observation
// x_n ~ N(mu_{c_n}, Lambda_{c_n}^{-1}). Gibbs updates use a Dirichlet prior on
// theta rows and a Normal-Inverse-Wishart prior on each Gaussian component.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mhng/random.hpp"

namespace mhng {

/// Category or sign index. Signs are rendered as A/B/C... at the edges.
using Label = int;
using Labels = std::vector<Label>;

/// One agent's observations, one row per object.
using Observations = Eigen::MatrixXd;

struct ModelDims {
  std::size_t n_objects = 10;
  std::size_t n_categories = 3;
  std::size_t n_signs = 3;
  std::size_t obs_dim = 3;

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct PriorConfig {
  double alpha_theta = 1.0;
  double alpha_pi = 1.0;
  Eigen::VectorXd niw_mean;   // m0
  double niw_kappa = 1.0;     // kappa0
  double niw_dof = 5.0;       // nu0, > obs_dim - 1
  Eigen::MatrixXd niw_scale;  // Psi0, inverse-Wishart scale
  /// Resample the sign prior pi from its Dirichlet conditional in each sweep.
  bool resample_sign_prior = false;

  /// alpha = 1, kappa0 = 1, nu0 = d + 2, Psi0 = I, m0 = column mean of `obs`.
  static PriorConfig defaults_for(const Observations& obs);

  void validate(std::size_t obs_dim) const;
};

struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
};

struct AgentState {
  Eigen::MatrixXd theta;                // L x K, rows are distributions over categories
  std::vector<GaussianComponent> phi;   // K components
  Eigen::VectorXd sign_prior;           // pi, length L
  Labels categories;                    // c_n
  Labels signs;                         // s_n
  std::uint64_t rng_seed = 0;

  std::size_t n_objects() const { return categories.size(); }
  std::size_t n_categories() const { return phi.size(); }
  std::size_t n_signs() const { return static_cast<std::size_t>(theta.rows()); }

  /// Throws ParameterError if any invariant is broken (row sums, index ranges).
  void validate() const;
};

struct JointPosteriorEstimate {
  Eigen::MatrixXd sign_marginals;  // N x L
  /// Row-wise standard error of the marginals across runs (zero for one run).
  Eigen::MatrixXd run_standard_error;
  std::size_t n_gibbs_runs = 0;
  std::size_t n_sweeps_per_run = 0;
  std::size_t burn_in = 0;
};

struct JointGibbsConfig {
  std::size_t n_runs = 10;
  std::size_t n_sweeps = 400;
  std::size_t burn_in = 100;

  void validate() const;
};

/// log N(x | mean, precision^{-1}). Throws ParameterError when the precision
/// is not positive definite and ShapeError on dimension mismatch.
double log_obs_likelihood(const Eigen::VectorXd& x, const GaussianComponent& comp);

/// P(c | x, s) ∝ N(x | phi_c) theta_{s,c}, normalized in log space.
Eigen::VectorXd category_conditional(const Eigen::VectorXd& x, Label sign,
                                     const AgentState& state);

Label sample_category(const Eigen::VectorXd& x, Label sign, const AgentState& state, Rng& rng);

/// Each row l ~ Dir(alpha + counts of c_n among objects with s_n = l).
Eigen::MatrixXd resample_theta(const AgentState& state, const PriorConfig& priors, Rng& rng);

/// Each component drawn from its NIW posterior; empty categories draw from the prior.
std::vector<GaussianComponent> resample_phi(const AgentState& state,
                                            const Observations& observations,
                                            const PriorConfig& priors, Rng& rng);

/// pi ~ Dir(alpha_pi + sign counts).
Eigen::VectorXd resample_sign_prior(const AgentState& state, const PriorConfig& priors, Rng& rng);

/// P(s | c_n) ∝ pi_s theta_{s, c_n}.
Eigen::VectorXd speaker_proposal_distribution(std::size_t object, const AgentState& state);

/// One sweep conditioned on the current signs: every c_n, then theta, then phi
/// (then pi when enabled). Signs are left untouched.
void gibbs_sweep_agent(AgentState& state, const Observations& observations,
                       const PriorConfig& priors, Rng& rng);

/// Fresh state: theta rows and phi drawn from the priors, uniform pi, signs
/// drawn from pi and categories drawn uniformly.
AgentState sample_initial_state(const ModelDims& dims, const PriorConfig& priors, Rng& rng);

/// Gibbs sampler over the joint two-agent model: s_n is shared and sampled
/// from pi_s theta^A_{s,cA} theta^B_{s,cB}. Label switching between runs is
/// removed by Hungarian-aligning every run to the first before averaging.
JointPosteriorEstimate joint_gibbs_posterior(const Observations& obs_a, const Observations& obs_b,
                                             const ModelDims& dims, const PriorConfig& priors_a,
                                             const PriorConfig& priors_b,
                                             const JointGibbsConfig& config, Rng& rng);

/// Same sampler with theta, phi and pi frozen at the values held by `a` and
/// `b`; only the shared signs and both agents' categories are resampled.
/// Runs start from the categories stored in the states.
JointPosteriorEstimate joint_gibbs_posterior_frozen(const AgentState& a, const AgentState& b,
                                                    const Observations& obs_a,
                                                    const Observations& obs_b,
                                                    const JointGibbsConfig& config, Rng& rng);

/// FNV-1a digest of both agents' (categories, signs).
std::uint64_t state_digest(const Labels& categories_a, const Labels& signs_a,
                           const Labels& categories_b, const Labels& signs_b);

}  // namespace mhng
