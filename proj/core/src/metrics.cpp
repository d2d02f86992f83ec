#include "mhng/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "mhng/errors.hpp"

namespace mhng {
namespace {

double choose2(double n) { return 0.5 * n * (n - 1.0); }

std::vector<std::size_t> dense_codes(std::span<const Label> labels, std::size_t& n_codes) {
  std::map<Label, std::size_t> code;
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = code.try_emplace(labels[i], code.size());
    out[i] = it->second;
  }
  n_codes = code.size();
  return out;
}

// Plain O(n^3) Kuhn-Munkres with row/column potentials.
Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment result;
  result.permutation.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) result.permutation[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) {
    result.total_cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(result.permutation[i]));
  }
  return result;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double total = out.row(i).sum();
    if (total > 0.0) out.row(i) /= total;
  }
  return out;
}

double ipow(std::size_t base, std::size_t exp, std::size_t cap) {
  double value = 1.0;
  for (std::size_t i = 0; i < exp; ++i) {
    value *= static_cast<double>(base);
    if (value > static_cast<double>(cap)) return value;
  }
  return value;
}

}  // namespace

double adjusted_rand_index(std::span<const Label> labels_a, std::span<const Label> labels_b) {
  if (labels_a.size() != labels_b.size()) throw ShapeError("adjusted_rand_index: length mismatch");
  if (labels_a.size() < 2) throw ShapeError("adjusted_rand_index: need at least two items");
  std::size_t ka = 0, kb = 0;
  const auto a = dense_codes(labels_a, ka);
  const auto b = dense_codes(labels_b, kb);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ka), static_cast<Eigen::Index>(kb));
  for (std::size_t i = 0; i < a.size(); ++i) table(static_cast<Eigen::Index>(a[i]), static_cast<Eigen::Index>(b[i])) += 1.0;
  double index = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i)
    for (Eigen::Index j = 0; j < table.cols(); ++j) index += choose2(table(i, j));
  double sum_a = 0.0, sum_b = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) sum_a += choose2(table.row(i).sum());
  for (Eigen::Index j = 0; j < table.cols(); ++j) sum_b += choose2(table.col(j).sum());
  const double total = choose2(static_cast<double>(labels_a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  const double denom = max_index - expected;
  if (denom == 0.0) return 1.0;  // both trivial and identical (one cluster or all singletons)
  return (index - expected) / denom;
}

Eigen::MatrixXd SignHistogramSet::normalized() const { return normalize_rows(counts); }

SignHistogramSet sign_histograms(std::span<const GameEvent> events, std::size_t window_rounds,
                                 const std::string& agent_id, std::size_t n_objects, std::size_t n_signs) {
  if (window_rounds == 0) throw ConfigError("sign_histograms: window must be at least one round");
  std::size_t last_round = 0;
  for (const auto& e : events) last_round = std::max(last_round, e.round);
  if (last_round < window_rounds) throw ConfigError("sign_histograms: window exceeds the event log");
  const std::size_t first_round = last_round - window_rounds + 1;
  SignHistogramSet hist;
  hist.counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_objects), static_cast<Eigen::Index>(n_signs));
  hist.first_step = std::numeric_limits<std::size_t>::max();
  for (const auto& e : events) {
    if (e.round < first_round) continue;
    if (e.object >= n_objects) throw ShapeError("sign_histograms: object out of range");
    const Label s = e.held_sign(agent_id);
    if (s < 0 || static_cast<std::size_t>(s) >= n_signs) throw ShapeError("sign_histograms: sign out of range");
    hist.counts(static_cast<Eigen::Index>(e.object), s) += 1.0;
    hist.first_step = std::min(hist.first_step, e.step);
    hist.last_step = std::max(hist.last_step, e.step);
  }
  return hist;
}

Assignment hungarian_match(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) throw ShapeError("hungarian_match: cost matrix must be square");
  const auto n = static_cast<std::size_t>(cost.rows());
  if (n == 0) return {};
  const Assignment best = solve_assignment(cost);
  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double tol = 1e-9 * scale * static_cast<double>(n);

  // Lexicographic tie-break: fix rows in order to the smallest column that
  // still admits an optimal completion.
  Assignment result;
  result.permutation.assign(n, 0);
  std::vector<std::size_t> free_rows(n), free_cols(n);
  std::iota(free_rows.begin(), free_rows.end(), 0);
  std::iota(free_cols.begin(), free_cols.end(), 0);
  double fixed_cost = 0.0;
  for (std::size_t row = 0; row < n; ++row) {
    free_rows.erase(free_rows.begin());
    bool placed = false;
    for (std::size_t ci = 0; ci < free_cols.size() && !placed; ++ci) {
      const std::size_t col = free_cols[ci];
      const double here = cost(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
      double rest = 0.0;
      if (!free_rows.empty()) {
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(free_rows.size()), static_cast<Eigen::Index>(free_rows.size()));
        std::size_t cj = 0;
        for (std::size_t c2 = 0; c2 < free_cols.size(); ++c2) {
          if (c2 == ci) continue;
          for (std::size_t r2 = 0; r2 < free_rows.size(); ++r2) {
            sub(static_cast<Eigen::Index>(r2), static_cast<Eigen::Index>(cj)) =
                cost(static_cast<Eigen::Index>(free_rows[r2]), static_cast<Eigen::Index>(free_cols[c2]));
          }
          ++cj;
        }
        rest = solve_assignment(sub).total_cost;
      }
      if (fixed_cost + here + rest <= best.total_cost + tol) {
        result.permutation[row] = col;
        fixed_cost += here;
        free_cols.erase(free_cols.begin() + static_cast<std::ptrdiff_t>(ci));
        placed = true;
      }
    }
    if (!placed) return best;  // tolerance trouble; the solver's optimum is still exact
  }
  result.total_cost = fixed_cost;
  return result;
}

AgreementResult agreement_score(const Eigen::MatrixXd& empirical, const Eigen::MatrixXd& target) {
  if (empirical.rows() != target.rows() || empirical.cols() != target.cols()) {
    throw ShapeError("agreement_score: empirical and target shapes differ");
  }
  if (empirical.rows() == 0) throw ShapeError("agreement_score: no objects");
  const Eigen::MatrixXd emp = normalize_rows(empirical);
  const Eigen::MatrixXd tgt = normalize_rows(target);
  const Eigen::Index L = emp.cols();
  AgreementResult result;
  result.cost_matrix.resize(L, L);
  for (Eigen::Index l = 0; l < L; ++l) {
    for (Eigen::Index m = 0; m < L; ++m) result.cost_matrix(l, m) = -emp.col(l).cwiseMin(tgt.col(m)).sum();
  }
  const Assignment match = hungarian_match(result.cost_matrix);
  result.matching = match.permutation;
  result.score = std::clamp(-match.total_cost / static_cast<double>(emp.rows()), 0.0, 1.0);
  return result;
}

JointSignDistribution enumerate_sign_posterior(const AgentState& a, const AgentState& b, std::size_t cap) {
  const std::size_t N = a.n_objects();
  const std::size_t L = a.n_signs();
  if (b.n_objects() != N || b.n_signs() != L) throw ShapeError("enumerate_sign_posterior: agents disagree");
  if (ipow(L, N, cap) > static_cast<double>(cap)) {
    throw ConfigError("enumerate_sign_posterior: L^N exceeds the enumeration cap");
  }
  // Per-object unnormalized weights; the joint is their product.
  Eigen::MatrixXd w(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(L));
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t l = 0; l < L; ++l) {
      const auto li = static_cast<Eigen::Index>(l);
      w(static_cast<Eigen::Index>(n), li) = a.sign_prior[li] * a.theta(li, a.categories[n]) * b.theta(li, b.categories[n]);
    }
  }
  JointSignDistribution dist{N, L, {}};
  const auto total = static_cast<std::size_t>(ipow(L, N, cap));
  dist.probs.resize(total);
  double z = 0.0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    double p = 1.0;
    std::size_t rem = idx;
    for (std::size_t n = 0; n < N; ++n) {
      p *= w(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rem % L));
      rem /= L;
    }
    dist.probs[idx] = p;
    z += p;
  }
  if (!(z > 0.0)) throw NumericalError("enumerate_sign_posterior: zero normalizer");
  for (double& p : dist.probs) p /= z;
  return dist;
}

double kl_to_posterior(std::span<const Eigen::MatrixXd> q_factors, const JointSignDistribution& target,
                       std::size_t cap) {
  const std::size_t N = target.n_objects;
  const std::size_t L = target.n_signs;
  if (q_factors.empty()) throw ShapeError("kl_to_posterior: no belief factors");
  if (ipow(L, N, cap) > static_cast<double>(cap)) {
    throw ConfigError("kl_to_posterior: L^N exceeds the enumeration cap; use marginal_kl");
  }
  for (const auto& f : q_factors) {
    if (static_cast<std::size_t>(f.rows()) != N || static_cast<std::size_t>(f.cols()) != L) {
      throw ShapeError("kl_to_posterior: factor shape differs from target");
    }
  }
  const std::size_t total = target.probs.size();
  std::vector<double> q(total);
  double z = 0.0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    double v = 1.0;
    std::size_t rem = idx;
    for (std::size_t n = 0; n < N; ++n) {
      const auto s = static_cast<Eigen::Index>(rem % L);
      for (const auto& f : q_factors) v *= f(static_cast<Eigen::Index>(n), s);
      rem /= L;
    }
    q[idx] = v;
    z += v;
  }
  if (!(z > 0.0)) throw NumericalError("kl_to_posterior: product of factors has no mass");
  double kl = 0.0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    const double qi = q[idx] / z;
    if (qi <= 0.0) continue;
    if (target.probs[idx] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += qi * std::log(qi / target.probs[idx]);
  }
  return std::max(kl, 0.0);
}

double joint_kl(const JointSignDistribution& q, const JointSignDistribution& p) {
  if (q.n_objects != p.n_objects || q.n_signs != p.n_signs || q.probs.size() != p.probs.size()) {
    throw ShapeError("joint_kl: distributions cover different assignment sets");
  }
  double kl = 0.0;
  for (std::size_t idx = 0; idx < q.probs.size(); ++idx) {
    const double qi = q.probs[idx];
    if (qi <= 0.0) continue;
    kl += qi * (std::log(qi) - std::log(std::max(p.probs[idx], 1e-300)));
  }
  return std::max(kl, 0.0);
}

double marginal_kl(const Eigen::MatrixXd& q, const Eigen::MatrixXd& p) {
  if (q.rows() != p.rows() || q.cols() != p.cols()) throw ShapeError("marginal_kl: shape mismatch");
  const Eigen::MatrixXd qn = normalize_rows(q);
  const Eigen::MatrixXd pn = normalize_rows(p);
  double kl = 0.0;
  for (Eigen::Index n = 0; n < qn.rows(); ++n) {
    for (Eigen::Index l = 0; l < qn.cols(); ++l) {
      if (qn(n, l) <= 0.0) continue;
      if (pn(n, l) <= 0.0) return std::numeric_limits<double>::infinity();
      kl += qn(n, l) * std::log(qn(n, l) / pn(n, l));
    }
  }
  return std::max(kl, 0.0);
}

Eigen::MatrixXd marginals(const JointSignDistribution& dist) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dist.n_objects),
                                            static_cast<Eigen::Index>(dist.n_signs));
  for (std::size_t idx = 0; idx < dist.probs.size(); ++idx) {
    std::size_t rem = idx;
    for (std::size_t n = 0; n < dist.n_objects; ++n) {
      m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rem % dist.n_signs)) += dist.probs[idx];
      rem /= dist.n_signs;
    }
  }
  return m;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

double levene_brown_forsythe(std::span<const double> sample_a, std::span<const double> sample_b) {
  auto median = [](std::span<const double> xs) {
    std::vector<double> v(xs.begin(), xs.end());
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };
  std::vector<std::vector<double>> groups;
  for (auto xs : {sample_a, sample_b}) {
    const double med = median(xs);
    std::vector<double> z;
    for (double x : xs) z.push_back(std::abs(x - med));
    groups.push_back(std::move(z));
  }
  double n_total = 0.0, grand = 0.0;
  std::vector<double> means;
  for (const auto& g : groups) {
    const double m = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    means.push_back(m);
    grand += m * static_cast<double>(g.size());
    n_total += static_cast<double>(g.size());
  }
  grand /= n_total;
  double between = 0.0, within = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    between += static_cast<double>(groups[i].size()) * (means[i] - grand) * (means[i] - grand);
    for (double z : groups[i]) within += (z - means[i]) * (z - means[i]);
  }
  const double k = static_cast<double>(groups.size());
  if (within <= 0.0) return between <= 0.0 ? 1.0 : 0.0;
  const double f = (n_total - k) / (k - 1.0) * between / within;
  boost::math::fisher_f dist(k - 1.0, n_total - k);
  return boost::math::cdf(boost::math::complement(dist, f));
}

TTestResult welch_t_test(std::span<const double> sample_a, std::span<const double> sample_b,
                         double bonferroni_factor) {
  if (sample_a.size() < 2 || sample_b.size() < 2) throw ConfigError("welch_t_test: each sample needs >= 2 values");
  if (!(bonferroni_factor >= 1.0)) throw ConfigError("welch_t_test: Bonferroni factor must be >= 1");
  const Summary a = summarize(sample_a);
  const Summary b = summarize(sample_b);
  const double na = static_cast<double>(a.n), nb = static_cast<double>(b.n);
  const double va = a.sd * a.sd / na, vb = b.sd * b.sd / nb;
  TTestResult r;
  r.levene_p = levene_brown_forsythe(sample_a, sample_b);
  const double se2 = va + vb;
  if (se2 <= 0.0) {
    r.dof = na + nb - 2.0;
    if (a.mean == b.mean) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = a.mean > b.mean ? std::numeric_limits<double>::infinity()
                                    : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
  } else {
    r.statistic = (a.mean - b.mean) / std::sqrt(se2);
    r.dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    boost::math::students_t dist(r.dof);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic)));
  }
  r.correction_factor = bonferroni_factor;
  r.corrected = bonferroni_factor > 1.0;
  r.correction = r.corrected ? "bonferroni" : "none";
  r.p_value = std::clamp(r.p_value * bonferroni_factor, 0.0, 1.0);
  return r;
}

}  // namespace mhng
