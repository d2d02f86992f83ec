#pragma once

#include <cstdint>
#include <random>
#include <span>

#include <Eigen/Dense>

namespace mhng {

/// Every stochastic routine takes its generator explicitly; same seed and
/// same inputs give bit-identical outputs.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent stream seeds from a
/// master seed, e.g. derive_seed(master, replicate).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

double uniform01(Rng& rng);
double standard_normal(Rng& rng);

/// Draw an index from non-negative weights (need not be normalized).
/// Throws NumericalError if the weights sum to zero or are not finite.
std::size_t sample_categorical(std::span<const double> weights, Rng& rng);

/// Draw an index from unnormalized log-weights using log-sum-exp.
/// Throws NumericalError when no weight is finite.
std::size_t sample_log_categorical(std::span<const double> log_weights, Rng& rng);

/// log(sum(exp(v))) computed stably; -inf for an all -inf input.
double log_sum_exp(std::span<const double> values);

Eigen::VectorXd sample_dirichlet(const Eigen::VectorXd& alpha, Rng& rng);

/// Wishart(dof, scale) via the Bartlett decomposition. Mean is dof * scale.
Eigen::MatrixXd sample_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng);

/// x ~ N(mean, precision^{-1}).
Eigen::VectorXd sample_gaussian_precision(const Eigen::VectorXd& mean,
                                          const Eigen::MatrixXd& precision, Rng& rng);

}  // namespace mhng
