#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mhng/errors.hpp"
#include "mhng/random.hpp"

using namespace mhng;

TEST_CASE("derive_seed is deterministic and separates streams") {
  CHECK(derive_seed(7, 1) == derive_seed(7, 1));
  CHECK(derive_seed(7, 1) != derive_seed(7, 2));
  CHECK(derive_seed(7, 1) != derive_seed(8, 1));
}

TEST_CASE("log_sum_exp") {
  const std::vector<double> v{1000.0, 1000.0};
  CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-14));
  const std::vector<double> small{-1.0, -2.0, -3.0};
  CHECK(log_sum_exp(small) == doctest::Approx(std::log(std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0))));
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> none{ninf, ninf};
  CHECK(log_sum_exp(none) == ninf);
}

TEST_CASE("sample_categorical frequencies") {
  Rng rng(3);
  const std::vector<double> w{1.0, 3.0, 0.0, 6.0};
  std::vector<int> counts(4, 0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++counts[sample_categorical(w, rng)];
  CHECK(counts[2] == 0);
  CHECK(counts[0] / double(n) == doctest::Approx(0.1).epsilon(0.05));
  CHECK(counts[1] / double(n) == doctest::Approx(0.3).epsilon(0.02));
  CHECK(counts[3] / double(n) == doctest::Approx(0.6).epsilon(0.02));
}

TEST_CASE("sample_categorical rejects degenerate weights") {
  Rng rng(1);
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(sample_categorical(zero, rng), NumericalError);
  const std::vector<double> nan{std::nan(""), 1.0};
  CHECK_THROWS_AS(sample_categorical(nan, rng), NumericalError);
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> logs{ninf, ninf};
  CHECK_THROWS_AS(sample_log_categorical(logs, rng), NumericalError);
}

TEST_CASE("sample_log_categorical survives huge offsets") {
  Rng rng(5);
  const std::vector<double> lw{-1e6, -1e6 + std::log(3.0)};
  int ones = 0;
  for (int i = 0; i < 40000; ++i) ones += sample_log_categorical(lw, rng) == 1;
  CHECK(ones / 40000.0 == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("Dirichlet and Wishart means") {
  Rng rng(11);
  Eigen::VectorXd alpha(3);
  alpha << 1.0, 2.0, 5.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd d = sample_dirichlet(alpha, rng);
    CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-12));
    mean += d;
  }
  mean /= n;
  for (int k = 0; k < 3; ++k) CHECK(mean(k) == doctest::Approx(alpha(k) / 8.0).epsilon(0.03));

  Eigen::MatrixXd scale(2, 2);
  scale << 2.0, 0.5, 0.5, 1.0;
  Eigen::MatrixXd wmean = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < n; ++i) wmean += sample_wishart(6.0, scale, rng);
  wmean /= n;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) CHECK(wmean(r, c) == doctest::Approx(6.0 * scale(r, c)).epsilon(0.04));
}

TEST_CASE("Gaussian by precision has the inverse covariance") {
  Rng rng(13);
  Eigen::MatrixXd prec(2, 2);
  prec << 4.0, 1.0, 1.0, 2.0;
  const Eigen::MatrixXd cov = prec.inverse();
  Eigen::Vector2d mu(1.0, -2.0);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2, 2);
  Eigen::Vector2d m = Eigen::Vector2d::Zero();
  const int n = 100000;
  std::vector<Eigen::Vector2d> xs;
  for (int i = 0; i < n; ++i) {
    xs.push_back(sample_gaussian_precision(mu, prec, rng));
    m += xs.back();
  }
  m /= n;
  for (const auto& x : xs) s += (x - m) * (x - m).transpose();
  s /= n - 1;
  CHECK(m(0) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(m(1) == doctest::Approx(-2.0).epsilon(0.01));
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) CHECK(s(r, c) == doctest::Approx(cov(r, c)).epsilon(0.03));
}
