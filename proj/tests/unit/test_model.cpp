#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mhng/errors.hpp"
#include "mhng/metrics.hpp"
#include "mhng/model.hpp"

using namespace mhng;

namespace {

// Independent log density: explicit inverse and determinant.
double oracle_log_normal(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& precision) {
  const Eigen::VectorXd d = x - mean;
  const double quad = d.dot(precision * d);
  return 0.5 * std::log(precision.determinant()) - 0.5 * x.size() * std::log(2.0 * std::numbers::pi) - 0.5 * quad;
}

ModelDims small_dims(std::size_t n, std::size_t k, std::size_t l) {
  ModelDims d;
  d.n_objects = n;
  d.n_categories = k;
  d.n_signs = l;
  d.obs_dim = 3;
  return d;
}

PriorConfig unit_priors() {
  PriorConfig p;
  p.niw_mean = Eigen::VectorXd::Zero(3);
  p.niw_scale = Eigen::MatrixXd::Identity(3, 3);
  p.niw_dof = 5.0;
  return p;
}

Observations clustered(std::size_t per_cluster, Rng& rng, double spread = 8.0) {
  Observations x(3 * per_cluster, 3);
  for (std::size_t i = 0; i < 3 * per_cluster; ++i) {
    const double centre = spread * static_cast<double>(i / per_cluster);
    for (int j = 0; j < 3; ++j) x(i, j) = centre + standard_normal(rng);
  }
  return x;
}

}  // namespace

TEST_CASE("log_obs_likelihood matches the closed form") {
  Eigen::Vector3d x(0.3, -1.0, 2.0);
  GaussianComponent c;
  c.mean = Eigen::Vector3d(0.1, 0.2, 1.5);
  Eigen::MatrixXd a(3, 3);
  a << 2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0;
  c.precision = a;
  CHECK(log_obs_likelihood(x, c) == doctest::Approx(oracle_log_normal(x, c.mean, c.precision)).epsilon(1e-12));
  GaussianComponent bad = c;
  bad.precision(0, 0) = -5.0;
  CHECK_THROWS_AS(log_obs_likelihood(x, bad), ParameterError);
  CHECK_THROWS_AS(log_obs_likelihood(Eigen::Vector2d(1, 2), c), ShapeError);
}

TEST_CASE("category_conditional equals normalized theta times density") {
  Rng rng(2);
  AgentState s = sample_initial_state(small_dims(4, 3, 2), unit_priors(), rng);
  const Eigen::Vector3d x(0.5, -0.4, 1.2);
  for (Label sign = 0; sign < 2; ++sign) {
    const Eigen::VectorXd p = category_conditional(x, sign, s);
    Eigen::VectorXd want(3);
    for (int k = 0; k < 3; ++k) {
      want(k) = s.theta(sign, k) * std::exp(oracle_log_normal(x, s.phi[k].mean, s.phi[k].precision));
    }
    want /= want.sum();
    for (int k = 0; k < 3; ++k) CHECK(p(k) == doctest::Approx(want(k)).epsilon(1e-9));
  }
}

TEST_CASE("category_conditional stays finite far from every component") {
  Rng rng(4);
  AgentState s = sample_initial_state(small_dims(4, 3, 2), unit_priors(), rng);
  const Eigen::Vector3d far(1e4, -1e4, 1e4);
  const Eigen::VectorXd p = category_conditional(far, 0, s);
  CHECK(p.allFinite());
  CHECK(p.sum() == doctest::Approx(1.0));
}

TEST_CASE("speaker proposal is pi * theta column, normalized") {
  Rng rng(6);
  AgentState s = sample_initial_state(small_dims(5, 3, 3), unit_priors(), rng);
  s.sign_prior << 0.2, 0.5, 0.3;
  for (std::size_t n = 0; n < 5; ++n) {
    const Eigen::VectorXd p = speaker_proposal_distribution(n, s);
    Eigen::VectorXd want = s.sign_prior.cwiseProduct(s.theta.col(s.categories[n]));
    want /= want.sum();
    CHECK((p - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("resample_theta follows the Dirichlet conditional") {
  Rng rng(8);
  AgentState s = sample_initial_state(small_dims(6, 2, 2), unit_priors(), rng);
  s.categories = {0, 0, 1, 1, 1, 0};
  s.signs = {0, 0, 0, 1, 1, 1};
  PriorConfig p = unit_priors();
  p.alpha_theta = 0.5;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(2, 2);
  const int n = 40000;
  for (int i = 0; i < n; ++i) mean += resample_theta(s, p, rng);
  mean /= n;
  // sign 0: categories {0,0,1} -> (2.5, 1.5)/4 ; sign 1: {1,1,0} -> (1.5, 2.5)/4
  CHECK(mean(0, 0) == doctest::Approx(2.5 / 4.0).epsilon(0.01));
  CHECK(mean(0, 1) == doctest::Approx(1.5 / 4.0).epsilon(0.02));
  CHECK(mean(1, 1) == doctest::Approx(2.5 / 4.0).epsilon(0.01));
}

TEST_CASE("gibbs sweep leaves signs alone and is reproducible") {
  Rng data_rng(10);
  const Observations x = clustered(4, data_rng);
  const PriorConfig p = PriorConfig::defaults_for(x);
  Rng init(1);
  const AgentState s0 = sample_initial_state(small_dims(12, 3, 3), p, init);
  AgentState a = s0;
  AgentState b = s0;
  Rng ra(99), rb(99);
  for (int i = 0; i < 5; ++i) {
    gibbs_sweep_agent(a, x, p, ra);
    gibbs_sweep_agent(b, x, p, rb);
  }
  CHECK(a.signs == s0.signs);
  CHECK(a.categories == b.categories);
  CHECK((a.theta - b.theta).norm() == 0.0);
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("PriorConfig defaults") {
  Observations x(3, 3);
  x << 1, 2, 3, 3, 4, 5, 5, 6, 7;
  const PriorConfig p = PriorConfig::defaults_for(x);
  CHECK(p.niw_mean(0) == doctest::Approx(3.0));
  CHECK(p.niw_dof == doctest::Approx(5.0));
  CHECK(p.niw_kappa == 1.0);
  CHECK(p.niw_scale.isIdentity());
  PriorConfig bad = p;
  bad.niw_dof = 1.5;
  CHECK_THROWS_AS(bad.validate(3), ConfigError);
}

TEST_CASE("state_digest reacts to any label") {
  const Labels c{0, 1, 2}, s{2, 1, 0};
  const auto d = state_digest(c, s, c, s);
  CHECK(d == state_digest(c, s, c, s));
  Labels c2 = c;
  c2[1] = 0;
  CHECK(d != state_digest(c2, s, c, s));
  CHECK(d != state_digest(c, s, c2, s));
  // swapping the agents is a different state
  CHECK(state_digest(c, s, c2, s) != state_digest(c2, s, c, s));
}

TEST_CASE("frozen joint sampler matches the factorized oracle") {
  Rng rng(21);
  const ModelDims dims = small_dims(3, 2, 2);
  AgentState a = sample_initial_state(dims, unit_priors(), rng);
  AgentState b = sample_initial_state(dims, unit_priors(), rng);
  for (int k = 0; k < 2; ++k) {
    a.phi[k].mean = Eigen::Vector3d::Constant(k == 0 ? -1.0 : 1.0);
    b.phi[k].mean = Eigen::Vector3d::Constant(k == 0 ? 1.0 : -1.0);
    a.phi[k].precision = b.phi[k].precision = Eigen::MatrixXd::Identity(3, 3);
  }
  a.theta << 0.8, 0.2, 0.3, 0.7;
  b.theta << 0.6, 0.4, 0.1, 0.9;
  a.sign_prior << 0.4, 0.6;
  b.sign_prior = a.sign_prior;
  Observations xa(3, 3), xb(3, 3);
  xa << -1, -0.5, -1.2, 0.2, 0.1, -0.1, 1.1, 0.9, 1.3;
  xb << 0.7, 1.0, 0.4, -0.3, 0.2, 0.0, -1.0, -0.8, -1.1;
  JointGibbsConfig cfg;
  cfg.n_runs = 4;
  cfg.n_sweeps = 20000;
  cfg.burn_in = 500;
  const auto est = joint_gibbs_posterior_frozen(a, b, xa, xb, cfg, rng);
  for (Eigen::Index n = 0; n < 3; ++n) {
    Eigen::Vector2d want;
    for (int s = 0; s < 2; ++s) {
      double ma = 0.0, mb = 0.0;
      for (int k = 0; k < 2; ++k) {
        ma += a.theta(s, k) * std::exp(oracle_log_normal(xa.row(n).transpose(), a.phi[k].mean, a.phi[k].precision));
        mb += b.theta(s, k) * std::exp(oracle_log_normal(xb.row(n).transpose(), b.phi[k].mean, b.phi[k].precision));
      }
      want(s) = a.sign_prior(s) * ma * mb;
    }
    want /= want.sum();
    CHECK(std::abs(est.sign_marginals(n, 0) - want(0)) < 0.015);
  }
}

TEST_CASE("joint sampler recovers well separated structure") {
  Rng data_rng(30);
  const Observations xa = clustered(4, data_rng);
  const Observations xb = clustered(4, data_rng);
  Labels truth;
  for (int i = 0; i < 12; ++i) truth.push_back(i / 4);
  PriorConfig pa = PriorConfig::defaults_for(xa), pb = PriorConfig::defaults_for(xb);
  pa.niw_scale *= 4.0;
  pb.niw_scale *= 4.0;
  // The centres sit on one diagonal; with kappa0 = 1 the pull toward m0
  // stretches the outer components along it until one covers both.
  pa.niw_kappa = pb.niw_kappa = 0.01;
  JointGibbsConfig cfg;
  cfg.n_runs = 3;
  cfg.n_sweeps = 1000;
  cfg.burn_in = 200;
  Rng rng(31);
  const auto est = joint_gibbs_posterior(xa, xb, small_dims(12, 3, 3), pa, pb, cfg, rng);
  Labels argmax(12);
  for (Eigen::Index n = 0; n < 12; ++n) {
    Eigen::Index best = 0;
    est.sign_marginals.row(n).maxCoeff(&best);
    argmax[n] = static_cast<Label>(best);
    CHECK(est.sign_marginals.row(n).sum() == doctest::Approx(1.0));
  }
  CHECK(adjusted_rand_index(argmax, truth) > 0.8);
}

TEST_CASE("JointGibbsConfig validation") {
  JointGibbsConfig c;
  c.burn_in = c.n_sweeps;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.n_runs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
