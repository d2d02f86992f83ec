#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mhng/event.hpp"
#include "mhng/model.hpp"

namespace mhng {

/// Hubert-Arabie adjusted Rand index. Returns 1 when both partitions are a
/// single cluster (identical partitions). Throws ShapeError on a length
/// mismatch or fewer than two items.
double adjusted_rand_index(std::span<const Label> labels_a, std::span<const Label> labels_b);

struct SignHistogramSet {
  Eigen::MatrixXd counts;  // N x L, integral values
  std::size_t first_step = 0;
  std::size_t last_step = 0;

  /// Rows scaled to sum to one; all-zero rows stay zero.
  Eigen::MatrixXd normalized() const;
};

/// Counts, per object, the sign `agent_id` holds after each interaction that
/// targeted the object during the last `window_rounds` rounds of the log.
/// Throws ConfigError when the log has fewer rounds than the window.
SignHistogramSet sign_histograms(std::span<const GameEvent> events, std::size_t window_rounds,
                                 const std::string& agent_id, std::size_t n_objects, std::size_t n_signs);

struct Assignment {
  std::vector<std::size_t> permutation;  // row i -> column permutation[i]
  double total_cost = 0.0;
};

/// Minimum-cost perfect matching on a square matrix (Kuhn-Munkres with
/// potentials, O(n^3)). Ties resolve to the lexicographically smallest
/// permutation.
Assignment hungarian_match(const Eigen::MatrixXd& cost);

struct AgreementResult {
  double score = 0.0;
  std::vector<std::size_t> matching;  // empirical sign l -> target sign matching[l]
  Eigen::MatrixXd cost_matrix;        // L x L
};

/// Rows of both inputs are normalized to distributions. cost(l, l') =
/// -sum_n min(emp(n,l), tgt(n,l')); score = sum_n sum_l min(emp(n,l),
/// tgt(n, matching[l])) / N.
AgreementResult agreement_score(const Eigen::MatrixXd& empirical, const Eigen::MatrixXd& target);

/// Distribution over all L^N joint sign assignments. Index of an assignment
/// is sum_n s_n * L^n (object 0 is the fastest digit).
struct JointSignDistribution {
  std::size_t n_objects = 0;
  std::size_t n_signs = 0;
  std::vector<double> probs;
};

inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;

/// Exact p(s | c_a, c_b) ∝ prod_n pi_s theta^a_{s,c_a} theta^b_{s,c_b} for
/// fixed categories, by enumeration.
JointSignDistribution enumerate_sign_posterior(const AgentState& a, const AgentState& b,
                                               std::size_t cap = kDefaultEnumerationCap);

/// KL(q || p) where q is the normalized pointwise product of the per-agent
/// factors (each N x L, factorized over objects) and p is enumerated.
/// Throws ConfigError when L^N exceeds `cap`; use marginal_kl then.
double kl_to_posterior(std::span<const Eigen::MatrixXd> q_factors, const JointSignDistribution& target,
                       std::size_t cap = kDefaultEnumerationCap);

/// KL(q || p) between two distributions over the same L^N assignments.
/// Terms with q = 0 contribute 0; p is floored at 1e-300.
double joint_kl(const JointSignDistribution& q, const JointSignDistribution& p);

/// Sum over objects of KL(q_n || p_n) between per-object marginals.
double marginal_kl(const Eigen::MatrixXd& q, const Eigen::MatrixXd& p);

/// Per-object marginals of a joint distribution, N x L.
Eigen::MatrixXd marginals(const JointSignDistribution& dist);

struct TTestResult {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  double levene_p = 1.0;
  bool corrected = false;
  std::string correction;  // "none" or "bonferroni"
  double correction_factor = 1.0;
};

/// Welch's two-sided t-test with Welch-Satterthwaite dof. `levene_p` is the
/// Brown-Forsythe (median-centred) Levene test. A Bonferroni factor > 1
/// multiplies the p-value (capped at 1). Both samples need >= 2 values.
TTestResult welch_t_test(std::span<const double> sample_a, std::span<const double> sample_b,
                         double bonferroni_factor = 1.0);

double levene_brown_forsythe(std::span<const double> sample_a, std::span<const double> sample_b);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n - 1); 0 for n < 2
  std::size_t n = 0;
};

Summary summarize(std::span<const double> values);

}  // namespace mhng
