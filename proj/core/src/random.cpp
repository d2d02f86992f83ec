#include "mhng/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mhng/errors.hpp"

namespace mhng {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

std::size_t sample_categorical(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw NumericalError("sample_categorical: weights must be finite and non-negative");
    }
    total += w;
  }
  if (!(total > 0.0)) {
    throw NumericalError("sample_categorical: weights sum to zero");
  }
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // u landed on the rounding slack at the top; return the last positive entry.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

double log_sum_exp(std::span<const double> values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

std::size_t sample_log_categorical(std::span<const double> log_weights, Rng& rng) {
  const double lse = log_sum_exp(log_weights);
  if (!std::isfinite(lse)) {
    throw NumericalError("sample_log_categorical: no finite log-weight");
  }
  std::vector<double> probs(log_weights.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = std::isnan(log_weights[i]) ? 0.0 : std::exp(log_weights[i] - lse);
  }
  return sample_categorical(probs, rng);
}

Eigen::VectorXd sample_dirichlet(const Eigen::VectorXd& alpha, Rng& rng) {
  Eigen::VectorXd draw(alpha.size());
  for (Eigen::Index i = 0; i < alpha.size(); ++i) {
    if (!(alpha[i] > 0.0)) throw ParameterError("sample_dirichlet: concentration must be positive");
    draw[i] = std::gamma_distribution<double>(alpha[i], 1.0)(rng);
  }
  double total = draw.sum();
  if (!(total > 0.0)) {
    // All gammas underflowed (tiny concentrations); fall back to the largest-alpha vertex.
    Eigen::Index best = 0;
    alpha.maxCoeff(&best);
    draw.setZero();
    draw[best] = 1.0;
    return draw;
  }
  return draw / total;
}

Eigen::MatrixXd sample_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng) {
  const Eigen::Index d = scale.rows();
  if (dof <= static_cast<double>(d) - 1.0) {
    throw ParameterError("sample_wishart: dof must exceed dim - 1");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) {
    throw ParameterError("sample_wishart: scale is not positive definite");
  }
  Eigen::MatrixXd bartlett = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double shape = 0.5 * (dof - static_cast<double>(i));
    bartlett(i, i) = std::sqrt(2.0 * std::gamma_distribution<double>(shape, 1.0)(rng));
    for (Eigen::Index j = 0; j < i; ++j) bartlett(i, j) = standard_normal(rng);
  }
  const Eigen::MatrixXd factor = llt.matrixL() * bartlett;
  return factor * factor.transpose();
}

Eigen::VectorXd sample_gaussian_precision(const Eigen::VectorXd& mean,
                                          const Eigen::MatrixXd& precision, Rng& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw ParameterError("sample_gaussian_precision: precision is not positive definite");
  }
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
  // precision = U U^T with U lower; U^{-T} z has covariance precision^{-1}.
  return mean + llt.matrixU().solve(z);
}

}  // namespace mhng
