#include "mhng/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mhng/errors.hpp"

namespace mhng {
namespace {

constexpr double kClampLow = 1e-9;
constexpr double kClampHigh = 1.0 - 1e-9;

// Fits run in u = b = p(0) and v = a + b = p(1), where the feasible region is
// the unit square and p = v r + u (1 - r).

// d/du of the mean NLL at fixed v. The clamp is treated as flat.
double nll_du(double u, double v, std::span<const AcceptanceSample> samples) {
  double g = 0.0;
  for (const auto& s : samples) {
    const double p = v * s.r + u * (1.0 - s.r);
    if (p < kClampLow || p > kClampHigh) continue;
    g += (s.z ? -1.0 / p : 1.0 / (1.0 - p)) * (1.0 - s.r);
  }
  return g;
}

// Minimizer over u in [0, 1] for fixed v, by bisection on the derivative.
double best_u(double v, std::span<const AcceptanceSample> samples, double tolerance) {
  if (nll_du(0.0, v, samples) >= 0.0) return 0.0;
  if (nll_du(1.0, v, samples) <= 0.0) return 1.0;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    (nll_du(mid, v, samples) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::pair<double, double> project_segment(double a, double b, double a0, double b0, double a1, double b1) {
  const double da = a1 - a0, db = b1 - b0;
  const double t = std::clamp(((a - a0) * da + (b - b0) * db) / (da * da + db * db), 0.0, 1.0);
  return {a0 + t * da, b0 + t * db};
}

}  // namespace

double linear_bernoulli_nll(double a, double b, std::span<const AcceptanceSample> samples) {
  if (samples.empty()) throw ConfigError("linear_bernoulli_nll: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    const double p = std::clamp(a * s.r + b, kClampLow, kClampHigh);
    total -= s.z ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(samples.size());
}

std::pair<double, double> project_feasible(double a, double b) {
  // Parallelogram with vertices (0,0), (1,0), (0,1), (-1,1) in (a, b):
  // p(0) = b in [0,1] and p(1) = a + b in [0,1].
  if (b >= 0.0 && b <= 1.0 && a + b >= 0.0 && a + b <= 1.0) return {a, b};
  const std::pair<double, double> corners[4] = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {-1.0, 1.0}};
  const int edges[4][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}};
  std::pair<double, double> best{0.0, 0.0};
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& e : edges) {
    const auto [pa, pb] = project_segment(a, b, corners[e[0]].first, corners[e[0]].second, corners[e[1]].first,
                                          corners[e[1]].second);
    const double d = (pa - a) * (pa - a) + (pb - b) * (pb - b);
    if (d < best_d) {
      best_d = d;
      best = {pa, pb};
    }
  }
  return best;
}

FitResult fit_linear_bernoulli(std::span<const AcceptanceSample> samples, const FitOptions& options) {
  if (samples.empty()) throw ConfigError("fit_linear_bernoulli: no samples");
  FitResult fit;
  fit.n_samples = samples.size();
  double r_min = samples.front().r, r_max = samples.front().r;
  double accepted = 0.0;
  for (const auto& s : samples) {
    if (!(s.r >= 0.0 && s.r <= 1.0)) throw ParameterError("fit_linear_bernoulli: r must lie in [0, 1]");
    r_min = std::min(r_min, s.r);
    r_max = std::max(r_max, s.r);
    accepted += s.z ? 1.0 : 0.0;
  }
  if (samples.size() < 2 || r_min == r_max) {
    fit.degenerate = true;
    fit.converged = true;
    fit.a = 0.0;
    fit.b = accepted / static_cast<double>(samples.size());
    fit.nll = linear_bernoulli_nll(fit.a, fit.b, samples);
    return fit;
  }

  // The NLL is convex in (u, v), so its partial minimum over u is convex in v
  // and golden-section search over v finds the global optimum.
  struct Point {
    double v, u, f;
  };
  auto eval = [&](double v) {
    const double u = best_u(v, samples, options.tolerance);
    return Point{v, u, linear_bernoulli_nll(v - u, u, samples)};
  };
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.0, hi = 1.0;
  Point x1 = eval(hi - ratio * (hi - lo)), x2 = eval(lo + ratio * (hi - lo));
  for (fit.iterations = 0; fit.iterations < options.max_iterations && hi - lo > options.tolerance; ++fit.iterations) {
    if (x1.f <= x2.f) {
      hi = x2.v;
      x2 = x1;
      x1 = eval(hi - ratio * (hi - lo));
    } else {
      lo = x1.v;
      x1 = x2;
      x2 = eval(lo + ratio * (hi - lo));
    }
  }
  fit.converged = hi - lo <= options.tolerance;
  Point best = x1.f <= x2.f ? x1 : x2;
  // Exact edges, so vertex optima come out exactly.
  for (double edge : {0.0, 1.0}) {
    const Point p = eval(edge);
    if (p.f <= best.f) best = p;
  }
  fit.a = best.v - best.u;
  fit.b = best.u;
  fit.nll = best.f;
  return fit;
}

std::vector<AcceptanceBin> binned_acceptance(std::span<const AcceptanceSample> samples, std::size_t n_bins) {
  if (n_bins < 1) throw ConfigError("binned_acceptance: need at least one bin");
  std::vector<AcceptanceBin> bins(n_bins);
  std::vector<double> sum_r(n_bins, 0.0), sum_z(n_bins, 0.0);
  const double width = 1.0 / static_cast<double>(n_bins);
  for (std::size_t i = 0; i < n_bins; ++i) {
    bins[i].lower = static_cast<double>(i) * width;
    bins[i].upper = i + 1 == n_bins ? 1.0 : static_cast<double>(i + 1) * width;
  }
  for (const auto& s : samples) {
    if (!(s.r >= 0.0 && s.r <= 1.0)) throw ParameterError("binned_acceptance: r must lie in [0, 1]");
    auto idx = static_cast<std::size_t>(s.r / width);
    idx = std::min(idx, n_bins - 1);
    ++bins[idx].count;
    sum_r[idx] += s.r;
    sum_z[idx] += s.z ? 1.0 : 0.0;
  }
  for (std::size_t i = 0; i < n_bins; ++i) {
    if (bins[i].count == 0) continue;
    const double c = static_cast<double>(bins[i].count);
    bins[i].mean_r = sum_r[i] / c;
    bins[i].rate = sum_z[i] / c;
  }
  return bins;
}

std::vector<AcceptanceSample> acceptance_samples(std::span<const GameEvent> events, const std::string& listener_id) {
  std::vector<AcceptanceSample> out;
  for (const auto& e : events) {
    if (e.listener_id != listener_id || !e.mh_probability) continue;
    out.push_back({*e.mh_probability, e.accepted});
  }
  return out;
}

void infer_listener_mh_probabilities(std::vector<GameEvent>& events, const std::string& human_id, Side human_side,
                                     const Labels& initial_labels, const Observations& human_view,
                                     const ModelDims& dims, const PriorConfig& priors, std::size_t n_sweeps,
                                     std::uint64_t seed) {
  if (initial_labels.size() != dims.n_objects) throw ShapeError("infer_listener_mh_probabilities: label count");
  if (n_sweeps < 2) throw ConfigError("infer_listener_mh_probabilities: need at least two sweeps");
  Rng rng(seed);
  AgentState state = sample_initial_state(dims, priors, rng);
  Labels labels = initial_labels;
  for (auto& e : events) {
    if (e.listener_id == human_id) {
      state.signs = labels;
      state.signs[e.object] = e.listener_prior_sign;
      double r_sum = 0.0;
      std::size_t r_count = 0;
      for (std::size_t sweep = 0; sweep < n_sweeps; ++sweep) {
        gibbs_sweep_agent(state, human_view, priors, rng);
        if (sweep >= n_sweeps / 2) {
          r_sum += mh_acceptance_probability(state, e.object, e.proposed_sign);
          ++r_count;
        }
      }
      e.mh_probability = std::clamp(r_sum / static_cast<double>(r_count), 0.0, 1.0);
      e.mh_note = "inferred_offline";
    }
    const Labels& snapshot = human_side == Side::kA ? e.post_signs_a : e.post_signs_b;
    if (snapshot.size() == labels.size()) labels = snapshot;
  }
}

}  // namespace mhng
