#pragma once

// Reference implementations used only by tests. Each one takes the slow,
// obvious route so it shares no code path with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "mhng/behavior.hpp"
#include "mhng/model.hpp"

namespace oracle {

/// Hubert-Arabie ARI from pair counts: n11 pairs together in both, n10/n01
/// together in one only, n00 apart in both.
inline double ari_pairs(const std::vector<int>& a, const std::vector<int>& b) {
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      if (sa && sb) ++n11;
      else if (sa) ++n10;
      else if (sb) ++n01;
      else ++n00;
    }
  }
  const double denom = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
  if (denom == 0.0) return 1.0;
  return 2.0 * (n00 * n11 - n01 * n10) / denom;
}

struct BruteAssignment {
  std::vector<std::size_t> permutation;
  double cost = 0.0;
};

/// Exhaustive search; first minimum in lexicographic order wins.
inline BruteAssignment brute_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  BruteAssignment best{p, std::numeric_limits<double>::infinity()};
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p[i]));
    if (c < best.cost) best = {p, c};
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

struct Welch {
  double t = 0.0;
  double dof = 0.0;
};

inline Welch welch(const std::vector<double>& a, const std::vector<double>& b) {
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto var = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  const double va = var(a) / static_cast<double>(a.size());
  const double vb = var(b) / static_cast<double>(b.size());
  Welch w;
  w.t = (mean(a) - mean(b)) / std::sqrt(va + vb);
  w.dof = (va + vb) * (va + vb) /
          (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  return w;
}

/// p(s | c_a, c_b) over every joint sign vector, object 0 as the fastest
/// digit: prod_n pi_s theta^a_{s, c_a[n]} theta^b_{s, c_b[n]}.
inline std::vector<double> sign_posterior(const mhng::AgentState& a, const mhng::AgentState& b) {
  const std::size_t n = a.categories.size();
  const auto l = static_cast<std::size_t>(a.theta.rows());
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= l;
  std::vector<double> p(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    double w = 1.0;
    std::size_t rest = idx;
    for (std::size_t obj = 0; obj < n; ++obj) {
      const auto s = static_cast<Eigen::Index>(rest % l);
      rest /= l;
      w *= a.sign_prior(s) * a.theta(s, a.categories[obj]) * b.theta(s, b.categories[obj]);
    }
    p[idx] = w;
  }
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& x : p) x /= z;
  return p;
}

/// Per-object marginals of a distribution indexed as in sign_posterior.
inline Eigen::MatrixXd object_marginals(const std::vector<double>& p, std::size_t n, std::size_t l) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(l));
  for (std::size_t idx = 0; idx < p.size(); ++idx) {
    std::size_t rest = idx;
    for (std::size_t obj = 0; obj < n; ++obj) {
      m(static_cast<Eigen::Index>(obj), static_cast<Eigen::Index>(rest % l)) += p[idx];
      rest /= l;
    }
  }
  return m;
}

/// Mean Bernoulli NLL of P(z=1|r) = a r + b, clamped like the library.
inline double lb_nll(double a, double b, const std::vector<mhng::AcceptanceSample>& samples) {
  double s = 0.0;
  for (const auto& x : samples) {
    const double p = std::clamp(a * x.r + b, 1e-9, 1.0 - 1e-9);
    s -= x.z ? std::log(p) : std::log(1.0 - p);
  }
  return s / static_cast<double>(samples.size());
}

struct GridFit {
  double a = 0.0;
  double b = 0.0;
  double nll = std::numeric_limits<double>::infinity();
};

/// Grid over b in [0, 1] and a + b in [0, 1], `steps` points per axis.
inline GridFit lb_grid_search(const std::vector<mhng::AcceptanceSample>& samples, int steps) {
  GridFit best;
  for (int i = 0; i < steps; ++i) {
    const double b = i / static_cast<double>(steps - 1);
    for (int j = 0; j < steps; ++j) {
      const double sum = j / static_cast<double>(steps - 1);  // a + b
      const double a = sum - b;
      const double v = lb_nll(a, b, samples);
      if (v < best.nll) best = {a, b, v};
    }
  }
  return best;
}

/// Total variation between two discrete distributions.
inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

}  // namespace oracle
