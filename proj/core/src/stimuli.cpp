#include "mhng/stimuli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mhng/errors.hpp"
#include "mhng/random.hpp"

namespace mhng {
namespace {

constexpr int kSpecSchemaVersion = 1;

const std::vector<Eigen::Index>& view_columns(View view) {
  static const std::vector<Eigen::Index> human{kLightness, kAngle, kSize};
  static const std::vector<Eigen::Index> agent{kLightness, kU, kV};
  return view == View::kHuman ? human : agent;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  return cells;
}

struct ViewClassifier {
  std::vector<Eigen::VectorXd> means;
  Eigen::MatrixXd precision;

  ViewClassifier(const GroundTruthSpec& spec, const std::vector<Eigen::Index>& cols) {
    const auto d = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd cov(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) cov(i, j) = spec.shared_covariance(cols[i], cols[j]);
    precision = cov.inverse();
    for (const auto& mu : spec.means) {
      Eigen::VectorXd m(d);
      for (Eigen::Index i = 0; i < d; ++i) m[i] = mu[cols[i]];
      means.push_back(m);
    }
    columns = cols;
  }

  // Shared covariance: the log-determinant cancels, the smallest Mahalanobis distance wins.
  Label classify(const Eigen::VectorXd& x) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) v[static_cast<Eigen::Index>(i)] = x[columns[i]];
    Label best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < means.size(); ++k) {
      const Eigen::VectorXd diff = v - means[k];
      const double dist = diff.dot(precision * diff);
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<Label>(k);
      }
    }
    return best;
  }

  std::vector<Eigen::Index> columns;
};

Eigen::VectorXd draw_feature(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower, Rng& rng) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
  return mean + chol_lower * z;
}

}  // namespace

GroundTruthSpec GroundTruthSpec::builtin_default() {
  GroundTruthSpec spec;
  // Category 0 vs 1 differ mainly in Angle/Size (human view); 1 vs 2 mainly
  // in U*/V* (agent view). Each partial view confuses one pair.
  Eigen::VectorXd m0(kFeatureDim), m1(kFeatureDim), m2(kFeatureDim);
  m0 << 55.0, 10.0, 10.0, 1.0, 25.0;
  m1 << 50.0, 15.0, 14.0, 3.0, 42.0;
  m2 << 45.0, 40.0, -20.0, 3.3, 45.0;
  spec.means = {m0, m1, m2};
  Eigen::VectorXd sd(kFeatureDim);
  sd << 8.0, 5.0, 5.0, 0.4, 4.0;
  spec.shared_covariance = sd.cwiseAbs2().asDiagonal();
  spec.n_objects = 10;
  spec.seed = 20231101;
  return spec;
}

void GroundTruthSpec::validate() const {
  if (means.size() < 2) throw ConfigError("GroundTruthSpec: need K >= 2 categories");
  if (n_objects < 1) throw ConfigError("GroundTruthSpec: n_objects must be >= 1");
  for (const auto& m : means) {
    if (m.size() != kFeatureDim) throw ShapeError("GroundTruthSpec: means must have 5 entries");
  }
  if (shared_covariance.rows() != kFeatureDim || shared_covariance.cols() != kFeatureDim) {
    throw ShapeError("GroundTruthSpec: covariance must be 5 x 5");
  }
  if (!shared_covariance.isApprox(shared_covariance.transpose(), 1e-12)) {
    throw ParameterError("GroundTruthSpec: covariance must be symmetric");
  }
  if (Eigen::LLT<Eigen::MatrixXd>(shared_covariance).info() != Eigen::Success) {
    throw ParameterError("GroundTruthSpec: covariance must be positive definite");
  }
}

void to_json(nlohmann::json& j, const GroundTruthSpec& spec) {
  nlohmann::json means = nlohmann::json::array();
  for (const auto& m : spec.means) means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index i = 0; i < spec.shared_covariance.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(spec.shared_covariance.cols()));
    for (Eigen::Index k = 0; k < spec.shared_covariance.cols(); ++k) row[static_cast<std::size_t>(k)] = spec.shared_covariance(i, k);
    cov.push_back(row);
  }
  j = nlohmann::json{{"schema_version", kSpecSchemaVersion},
                     {"columns", {"L", "U", "V", "angle", "size"}},
                     {"means", means},
                     {"shared_covariance", cov},
                     {"n_objects", spec.n_objects},
                     {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, GroundTruthSpec& spec) {
  if (j.value("schema_version", 0) != kSpecSchemaVersion) throw ShapeError("stimulus spec: unsupported schema_version");
  spec.means.clear();
  for (const auto& row : j.at("means")) {
    const auto v = row.get<std::vector<double>>();
    spec.means.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  const auto& cov = j.at("shared_covariance");
  spec.shared_covariance.resize(static_cast<Eigen::Index>(cov.size()), static_cast<Eigen::Index>(cov.size()));
  for (std::size_t i = 0; i < cov.size(); ++i) {
    const auto row = cov[i].get<std::vector<double>>();
    if (row.size() != cov.size()) throw ShapeError("stimulus spec: covariance must be square");
    for (std::size_t k = 0; k < row.size(); ++k) {
      spec.shared_covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
    }
  }
  spec.n_objects = j.at("n_objects").get<std::size_t>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.validate();
}

StimulusSet generate_dataset(const GroundTruthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t K = spec.n_categories();
  StimulusSet set;
  set.labels.resize(spec.n_objects);
  for (std::size_t n = 0; n < spec.n_objects; ++n) set.labels[n] = static_cast<Label>(n % K);
  std::shuffle(set.labels.begin(), set.labels.end(), rng);
  const Eigen::MatrixXd chol = spec.shared_covariance.llt().matrixL();
  set.features.resize(static_cast<Eigen::Index>(spec.n_objects), kFeatureDim);
  for (std::size_t n = 0; n < spec.n_objects; ++n) {
    set.features.row(static_cast<Eigen::Index>(n)) =
        draw_feature(spec.means[static_cast<std::size_t>(set.labels[n])], chol, rng).transpose();
  }
  set.view_human = project_view(set.features, View::kHuman);
  set.view_agent = project_view(set.features, View::kAgent);
  return set;
}

Eigen::MatrixXd project_view(const Eigen::MatrixXd& features, View view) {
  if (features.cols() != kFeatureDim) throw ShapeError("project_view: features must have 5 columns");
  const auto& cols = view_columns(view);
  Eigen::MatrixXd out(features.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = features.col(cols[i]);
  return out;
}

void to_json(nlohmann::json& j, const RenderDescriptor& d) {
  j = nlohmann::json{{"gray_level", d.gray_level}, {"notch_angle", d.notch_angle}, {"radius_px", d.radius_px}};
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& values) {
  Eigen::MatrixXd out = values;
  const auto n = static_cast<double>(values.rows());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    const double mean = values.col(c).mean();
    out.col(c).array() -= mean;
    if (values.rows() < 2) continue;
    const double sd = std::sqrt(out.col(c).squaredNorm() / (n - 1.0));
    if (sd > 0.0) out.col(c) /= sd;
  }
  return out;
}

RenderDescriptor render_descriptor(const Eigen::Vector3d& row, const RenderConfig& config) {
  RenderDescriptor d;
  const double lightness = std::clamp(row[0], 0.0, 100.0);
  d.gray_level = static_cast<int>(std::lround(255.0 * lightness / 100.0));
  const double two_pi = 2.0 * std::numbers::pi;
  d.notch_angle = std::fmod(row[1], two_pi);
  if (d.notch_angle < 0.0) d.notch_angle += two_pi;
  if (d.notch_angle >= two_pi) d.notch_angle = 0.0;
  const double size = std::clamp(row[2], config.size_min, config.size_max);
  const double t = (size - config.size_min) / (config.size_max - config.size_min);
  d.radius_px = config.radius_px_min + t * (config.radius_px_max - config.radius_px_min);
  return d;
}

std::vector<RenderDescriptor> render_descriptors(const Eigen::MatrixXd& view_human, const RenderConfig& config) {
  if (view_human.cols() != 3) throw ShapeError("render_descriptors: human view must have 3 columns");
  std::vector<RenderDescriptor> out;
  for (Eigen::Index n = 0; n < view_human.rows(); ++n) {
    out.push_back(render_descriptor(view_human.row(n).transpose(), config));
  }
  return out;
}

double OverlapDiagnostics::gap() const {
  return joint_accuracy - std::max(human_view_accuracy, agent_view_accuracy);
}

OverlapDiagnostics estimate_bayes_accuracy(const GroundTruthSpec& spec, std::size_t n_samples, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const ViewClassifier human(spec, view_columns(View::kHuman));
  const ViewClassifier agent(spec, view_columns(View::kAgent));
  const ViewClassifier joint(spec, {kLightness, kU, kV, kAngle, kSize});
  const Eigen::MatrixXd chol = spec.shared_covariance.llt().matrixL();
  std::vector<double> uniform(spec.n_categories(), 1.0);
  std::size_t hit_h = 0, hit_a = 0, hit_j = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto k = static_cast<Label>(sample_categorical(uniform, rng));
    const Eigen::VectorXd x = draw_feature(spec.means[static_cast<std::size_t>(k)], chol, rng);
    hit_h += human.classify(x) == k;
    hit_a += agent.classify(x) == k;
    hit_j += joint.classify(x) == k;
  }
  const double n = static_cast<double>(std::max<std::size_t>(n_samples, 1));
  return {static_cast<double>(hit_h) / n, static_cast<double>(hit_a) / n, static_cast<double>(hit_j) / n, n_samples};
}

void write_stimulus_csv(std::ostream& out, const StimulusSet& set) {
  out << "object_id,L,U,V,angle,size,label\n";
  char buf[64];
  for (Eigen::Index n = 0; n < set.features.rows(); ++n) {
    out << n;
    for (Eigen::Index c = 0; c < kFeatureDim; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", set.features(n, c));
      out << ',' << buf;
    }
    out << ',' << set.labels[static_cast<std::size_t>(n)] << '\n';
  }
}

StimulusSet read_stimulus_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ShapeError("stimulus csv: empty input");
  const std::vector<std::string> expected{"object_id", "L", "U", "V", "angle", "size", "label"};
  if (split_csv(line) != expected) throw ShapeError("stimulus csv: unexpected header");
  std::vector<std::vector<double>> rows;
  Labels labels;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != expected.size()) throw ShapeError("stimulus csv: wrong number of columns");
    if (std::stoul(cells[0]) != rows.size()) throw ShapeError("stimulus csv: object ids must be 0..N-1 in order");
    std::vector<double> row;
    for (std::size_t c = 1; c <= 5; ++c) row.push_back(std::stod(cells[c]));
    rows.push_back(std::move(row));
    labels.push_back(std::stoi(cells[6]));
  }
  StimulusSet set;
  set.features.resize(static_cast<Eigen::Index>(rows.size()), kFeatureDim);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    for (Eigen::Index c = 0; c < kFeatureDim; ++c) set.features(static_cast<Eigen::Index>(n), c) = rows[n][static_cast<std::size_t>(c)];
  }
  set.labels = std::move(labels);
  set.view_human = project_view(set.features, View::kHuman);
  set.view_agent = project_view(set.features, View::kAgent);
  return set;
}

nlohmann::json stimulus_sidecar(const GroundTruthSpec& spec) {
  return nlohmann::json{{"spec", spec}, {"seed", spec.seed}, {"view_columns", {{"human", {"L", "angle", "size"}}, {"agent", {"L", "U", "V"}}}}};
}

}  // namespace mhng
