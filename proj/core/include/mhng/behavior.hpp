#pragma once

// Listener acceptance model P(z = 1 | r) = a r + b, fitted by maximum
// likelihood over {0 <= b <= 1, 0 <= a + b <= 1}, i.e. a*r + b in [0, 1] for
// every r in [0, 1].

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mhng/event.hpp"
#include "mhng/model.hpp"
#include "mhng/protocol.hpp"

namespace mhng {

struct AcceptanceSample {
  double r = 0.0;  // MH acceptance probability under the listener's state
  bool z = false;  // accepted
};

struct FitResult {
  double a = 0.0;
  double b = 0.0;
  double nll = 0.0;  // mean negative log-likelihood per sample
  std::size_t n_samples = 0;
  std::size_t iterations = 0;
  bool converged = false;
  bool degenerate = false;  // fewer than two distinct r values: b-only fit
};

struct FitOptions {
  double tolerance = 1e-10;  // bracket width in p(0) and p(1)
  std::size_t max_iterations = 200;
};

/// Mean NLL with probabilities clamped to [1e-9, 1 - 1e-9].
double linear_bernoulli_nll(double a, double b, std::span<const AcceptanceSample> samples);

/// Euclidean projection of (a, b) onto the feasible parallelogram.
std::pair<double, double> project_feasible(double a, double b);

/// Constrained MLE. Works in p(0) = b and p(1) = a + b, where the feasible
/// region is the unit square: golden-section search over p(1) around an
/// exact inner minimization over p(0). Throws ConfigError on empty input.
FitResult fit_linear_bernoulli(std::span<const AcceptanceSample> samples, const FitOptions& options = {});

struct AcceptanceBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_r = 0.0;
  std::optional<double> rate;  // empty when the bin has no samples
  std::size_t count = 0;
};

/// Equal-width bins over [0, 1]; the last bin is closed so r = 1 lands in it.
std::vector<AcceptanceBin> binned_acceptance(std::span<const AcceptanceSample> samples, std::size_t n_bins);

/// (r, z) pairs from events whose listener is `listener_id` and whose
/// mh_probability is known.
std::vector<AcceptanceSample> acceptance_samples(std::span<const GameEvent> events, const std::string& listener_id);

/// Offline pass that reconstructs a human listener's MH probability. The
/// human's labels before each event (previous snapshot, or `initial_labels`,
/// with the event's listener_prior_sign for its object) are treated as that
/// human's signs; an Inter-GM on the human's view is Gibbs-sampled
/// conditioned on them and r = min(1, theta_{s*,c}/theta_{s,c}) is averaged
/// over the second half of `n_sweeps`. Only events where `human_id` listened
/// are modified. The chain is warm-started from one event to the next.
void infer_listener_mh_probabilities(std::vector<GameEvent>& events, const std::string& human_id,
                                     Side human_side, const Labels& initial_labels,
                                     const Observations& human_view, const ModelDims& dims,
                                     const PriorConfig& priors, std::size_t n_sweeps, std::uint64_t seed);

}  // namespace mhng
