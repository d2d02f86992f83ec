#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mhng/errors.hpp"
#include "mhng/stimuli.hpp"

using namespace mhng;

namespace {

// Bayes accuracy for a diagonal shared covariance, uniform class prior,
// restricted to `cols`. Written against the GroundTruthSpec fields only.
double oracle_bayes_accuracy(const GroundTruthSpec& spec, const std::vector<int>& cols, int n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> pick(0, static_cast<int>(spec.means.size()) - 1);
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    const int k = pick(gen);
    std::vector<double> x(5);
    for (int j = 0; j < 5; ++j) x[j] = spec.means[k](j) + std::sqrt(spec.shared_covariance(j, j)) * z(gen);
    int best = 0;
    double best_ll = -1e300;
    for (int c = 0; c < static_cast<int>(spec.means.size()); ++c) {
      double ll = 0.0;
      for (int j : cols) ll -= std::pow(x[j] - spec.means[c](j), 2) / (2.0 * spec.shared_covariance(j, j));
      if (ll > best_ll) best_ll = ll, best = c;
    }
    correct += best == k;
  }
  return correct / static_cast<double>(n);
}

}  // namespace

TEST_CASE("shipped spec file equals the built-in default") {
  std::ifstream in(MHNG_DEFAULT_SPEC_PATH);
  REQUIRE(in.good());
  const GroundTruthSpec file = nlohmann::json::parse(in).get<GroundTruthSpec>();
  const GroundTruthSpec built = GroundTruthSpec::builtin_default();
  REQUIRE(file.means.size() == built.means.size());
  for (std::size_t k = 0; k < built.means.size(); ++k) CHECK((file.means[k] - built.means[k]).norm() < 1e-12);
  CHECK((file.shared_covariance - built.shared_covariance).norm() < 1e-12);
  CHECK(file.n_objects == built.n_objects);
  CHECK(file.seed == built.seed);
}

TEST_CASE("spec JSON round trip and validation") {
  const GroundTruthSpec s = GroundTruthSpec::builtin_default();
  const GroundTruthSpec back = nlohmann::json(s).get<GroundTruthSpec>();
  CHECK((back.shared_covariance - s.shared_covariance).norm() == 0.0);
  GroundTruthSpec bad = s;
  bad.means.resize(1);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.shared_covariance(0, 0) = -1.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("default dataset: 10 objects, all three labels, deterministic") {
  const StimulusSet a = generate_dataset(GroundTruthSpec::builtin_default());
  const StimulusSet b = generate_dataset(GroundTruthSpec::builtin_default());
  CHECK(a.n_objects() == 10);
  CHECK(std::set<Label>(a.labels.begin(), a.labels.end()).size() == 3);
  CHECK((a.features - b.features).norm() == 0.0);
  CHECK(a.labels == b.labels);
  CHECK(a.view_human.cols() == 3);
  CHECK(a.view_human.col(1) == a.features.col(kAngle));
  CHECK(a.view_agent.col(2) == a.features.col(kV));
  GroundTruthSpec other = GroundTruthSpec::builtin_default();
  other.seed += 1;
  CHECK((generate_dataset(other).features - a.features).norm() > 0.0);
}

TEST_CASE("CSV round trip is lossless") {
  const StimulusSet a = generate_dataset(GroundTruthSpec::builtin_default());
  std::stringstream buf;
  write_stimulus_csv(buf, a);
  CHECK(buf.str().rfind("object_id,L,U,V,angle,size,label\n", 0) == 0);
  const StimulusSet b = read_stimulus_csv(buf);
  CHECK((a.features - b.features).norm() == 0.0);
  CHECK(a.labels == b.labels);
  CHECK((a.view_agent - b.view_agent).norm() == 0.0);
  std::stringstream bad("object_id,L,U\n0,1,2\n");
  CHECK_THROWS(read_stimulus_csv(bad));
}

TEST_CASE("render descriptors") {
  const RenderDescriptor d = render_descriptor(Eigen::Vector3d(50.0, 1.0, 40.0));
  CHECK(d.gray_level == 128);  // round(127.5)
  CHECK(d.notch_angle == doctest::Approx(1.0));
  CHECK(d.radius_px == doctest::Approx(20.0 + (40.0 - 10.0) / 60.0 * 100.0));
  const RenderDescriptor clamp = render_descriptor(Eigen::Vector3d(140.0, -1.0, 500.0));
  CHECK(clamp.gray_level == 255);
  CHECK(clamp.notch_angle == doctest::Approx(2.0 * std::numbers::pi - 1.0));
  CHECK(clamp.radius_px == doctest::Approx(120.0));
  const RenderDescriptor low = render_descriptor(Eigen::Vector3d(-3.0, 7.0, -5.0));
  CHECK(low.gray_level == 0);
  CHECK(low.notch_angle >= 0.0);
  CHECK(low.notch_angle < 2.0 * std::numbers::pi);
  CHECK(low.radius_px == doctest::Approx(20.0));
  const auto all = render_descriptors(generate_dataset(GroundTruthSpec::builtin_default()).view_human);
  CHECK(all.size() == 10);
}

TEST_CASE("standardize_columns") {
  Eigen::MatrixXd m(4, 3);
  m << 1, 5, 2, 2, 5, 4, 3, 5, 6, 4, 5, 8;
  const Eigen::MatrixXd z = standardize_columns(m);
  for (int j : {0, 2}) {
    CHECK(z.col(j).mean() == doctest::Approx(0.0).scale(1.0));
    const double var = z.col(j).squaredNorm() / 3.0;
    CHECK(var == doctest::Approx(1.0));
  }
  CHECK(z.col(1).isZero());  // constant column only centred
  const Eigen::MatrixXd one = standardize_columns(m.topRows(1));
  CHECK(one.isZero());
}

TEST_CASE("overlap estimate agrees with an independent Bayes classifier") {
  const GroundTruthSpec s = GroundTruthSpec::builtin_default();
  const OverlapDiagnostics d = estimate_bayes_accuracy(s, 100000, 5);
  CHECK(d.n_samples == 100000);
  CHECK(d.human_view_accuracy == doctest::Approx(oracle_bayes_accuracy(s, {0, 3, 4}, 100000, 17)).epsilon(0.015));
  CHECK(d.agent_view_accuracy == doctest::Approx(oracle_bayes_accuracy(s, {0, 1, 2}, 100000, 18)).epsilon(0.015));
  CHECK(d.joint_accuracy == doctest::Approx(oracle_bayes_accuracy(s, {0, 1, 2, 3, 4}, 100000, 19)).epsilon(0.01));
  CHECK(d.gap() >= 0.05);
}

TEST_CASE("overlap gap vanishes when one view separates everything") {
  GroundTruthSpec s = GroundTruthSpec::builtin_default();
  s.means[0](kU) = -200.0;
  s.means[1](kU) = 0.0;
  s.means[2](kU) = 200.0;
  const OverlapDiagnostics d = estimate_bayes_accuracy(s, 20000, 1);
  CHECK(d.agent_view_accuracy > 0.999);
  CHECK(d.gap() < 0.01);
}
