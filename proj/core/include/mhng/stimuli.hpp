#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "mhng/model.hpp"

namespace mhng {

/// Feature columns: L* (CIELUV lightness, 0-100), U*, V* (CIELUV chroma),
/// Angle (notch direction, radians), Size (circle radius, display units).
inline constexpr Eigen::Index kFeatureDim = 5;
enum FeatureColumn : Eigen::Index { kLightness = 0, kU = 1, kV = 2, kAngle = 3, kSize = 4 };

struct GroundTruthSpec {
  std::vector<Eigen::VectorXd> means;  // K vectors of length 5
  Eigen::MatrixXd shared_covariance;   // 5 x 5
  std::size_t n_objects = 10;
  std::uint64_t seed = 0;

  /// The shipped default (data/default_stimulus_spec.json): three categories,
  /// each pair separable in exactly one partial view.
  static GroundTruthSpec builtin_default();
  void validate() const;
  std::size_t n_categories() const { return means.size(); }
};

void to_json(nlohmann::json& j, const GroundTruthSpec& spec);
void from_json(const nlohmann::json& j, GroundTruthSpec& spec);

enum class View { kHuman, kAgent };

struct StimulusSet {
  Eigen::MatrixXd features;  // N x 5
  Labels labels;             // ground-truth category per object
  Eigen::MatrixXd view_human;  // N x 3: L*, Angle, Size
  Eigen::MatrixXd view_agent;  // N x 3: L*, U*, V*

  std::size_t n_objects() const { return labels.size(); }
  const Eigen::MatrixXd& view(View v) const { return v == View::kHuman ? view_human : view_agent; }
};

/// Labels are round-robin over K then shuffled, so every category appears
/// when N >= K; features ~ N(mu_label, Sigma). Deterministic per spec.seed.
StimulusSet generate_dataset(const GroundTruthSpec& spec);

/// Column selection, no scaling. Human: (L*, Angle, Size); agent: (L*, U*, V*).
Eigen::MatrixXd project_view(const Eigen::MatrixXd& features, View view);

/// Per-column z-scores using the sample mean and sample SD (n - 1) of the
/// matrix itself; constant columns are only centred.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& values);

struct RenderConfig {
  double size_min = 10.0;  // Size mapped to radius_px_min
  double size_max = 70.0;  // Size mapped to radius_px_max
  double radius_px_min = 20.0;
  double radius_px_max = 120.0;
};

struct RenderDescriptor {
  int gray_level = 0;        // 0-255, round(255 L*/100) with L* clamped to [0, 100]
  double notch_angle = 0.0;  // radians in [0, 2 pi)
  double radius_px = 0.0;    // affine map of clamped Size into [20, 120]
};

void to_json(nlohmann::json& j, const RenderDescriptor& d);

RenderDescriptor render_descriptor(const Eigen::Vector3d& human_view_row, const RenderConfig& config = {});
std::vector<RenderDescriptor> render_descriptors(const Eigen::MatrixXd& view_human,
                                                 const RenderConfig& config = {});

struct OverlapDiagnostics {
  double human_view_accuracy = 0.0;
  double agent_view_accuracy = 0.0;
  double joint_accuracy = 0.0;
  std::size_t n_samples = 0;

  double gap() const;  // joint - max(single views)
};

/// Monte Carlo accuracy of the Bayes classifier (true parameters, uniform
/// class prior) restricted to each view and to all five features.
OverlapDiagnostics estimate_bayes_accuracy(const GroundTruthSpec& spec, std::size_t n_samples,
                                           std::uint64_t seed);

/// CSV with header object_id,L,U,V,angle,size,label. Values use 17
/// significant digits so a read/write cycle is lossless.
void write_stimulus_csv(std::ostream& out, const StimulusSet& set);
StimulusSet read_stimulus_csv(std::istream& in);

/// Sidecar JSON capturing the generating spec and seed.
nlohmann::json stimulus_sidecar(const GroundTruthSpec& spec);

}  // namespace mhng
