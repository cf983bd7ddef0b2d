#pragma once

// Driving metrics, checkpoint evaluation and the ablation matrix.

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invdriver/model.hpp"
#include "invdriver/scene.hpp"
#include "invdriver/training.hpp"

namespace invd::eval {

using scene::Point2;

// Ego point indices reported as the 1 s, 2 s and 3 s horizons (0.5 s spacing).
inline constexpr std::array<std::size_t, 3> kHorizonIndex{1, 3, 5};
inline constexpr std::array<double, 3> kApThresholds{0.5, 1.0, 1.5};
inline constexpr double kExistenceThreshold = 0.5;
inline constexpr double kClassThreshold = 0.5;

struct HorizonMetrics {
  std::array<double, 3> at{0.0, 0.0, 0.0};  // 1 s, 2 s, 3 s
  double avg = 0.0;
  bool operator==(const HorizonMetrics&) const = default;
};

// L2 distance at indices 1/3/5. `pred` is [K_P * 2] flattened (x, y) pairs.
HorizonMetrics displacement_error(std::span<const double> pred, const std::vector<Point2>& gt);

// ---- collision ----

struct OrientedBox {
  Point2 center;
  double heading = 0.0;
  double length = 0.0;  // along heading
  double width = 0.0;
};

// Separating-axis test; touching boxes count as intersecting.
bool boxes_intersect(const OrientedBox& a, const OrientedBox& b);

// Largest separating gap over the four candidate axes. Positive: separated by
// at least this much. Non-positive: intersecting, with this much overlap on the
// tightest axis.
double separation(const OrientedBox& a, const OrientedBox& b);

std::array<Point2, 4> corners(const OrientedBox& b);

// Heading per trajectory point. The ego starts at the origin, which serves as
// the t - 1 point of the first chord; the last point uses its backward
// difference. Degenerate chords reuse the previous heading (0 at the start).
std::vector<double> trajectory_headings(std::span<const double> pts);

// Per horizon: whether the ego footprint along `ego` (flattened points) hits
// any agent's ground-truth footprint at any index up to that horizon.
std::array<bool, 3> collides(std::span<const double> ego, const std::vector<scene::AgentTrack>& agents,
                             double ego_length = scene::kEgoLength, double ego_width = scene::kEgoWidth);

// ---- map quality ----

struct MapPrediction {
  std::vector<Point2> points;
  std::size_t cls = 0;
  double score = 0.0;
};

// Mean of the two directed mean point-to-polyline distances.
double chamfer_distance(const std::vector<Point2>& a, const std::vector<Point2>& b);

// Predictions whose best real-class probability reaches kClassThreshold.
std::vector<MapPrediction> surviving_map_predictions(const model::ModelOutput& out);

struct MapSceneInput {
  std::vector<MapPrediction> predictions;
  std::vector<scene::Polyline> ground_truth;
};

struct MapMetrics {
  double chamfer = 0.0;  // NaN when no prediction matched
  std::size_t matched = 0;
  std::array<double, 3> ap{0.0, 0.0, 0.0};  // per threshold, averaged over classes present in the ground truth
  double mean_ap = 0.0;
  // Bitwise, so NaN fields compare equal to themselves.
  bool operator==(const MapMetrics&) const;
};

MapMetrics map_metrics(const std::vector<MapSceneInput>& scenes);

// ---- evaluation ----

struct MetricsReport {
  HorizonMetrics de;
  HorizonMetrics cr;  // fractions
  MapMetrics map;
  double mean_detected_agents = 0.0;  // existence >= 0.5
  std::size_t scene_count = 0;
  bool operator==(const MetricsReport&) const = default;
};

struct RunManifest {
  std::string model_config_json;
  std::string train_config_json;
  std::string scene_config_json;
  std::string dataset_path;
  std::string dataset_sha256;
  std::string checkpoint_path;
  std::string checkpoint_sha256;
  std::uint64_t seed = 0;
  std::string code_version;
  double duration_s = 0.0;
  double scenes_per_second = 0.0;  // local CPU, not comparable to GPU figures
};

using Predictor = std::function<model::ModelOutput(const scene::VectorScene&)>;

// Aggregates metrics over `scenes` in order. Throws ValidationError on an empty set.
MetricsReport evaluate_predictor(const std::vector<scene::VectorScene>& scenes, const ModelConfig& cfg,
                                 const Predictor& predict);

MetricsReport evaluate_model(const model::InVDriverModel& m, const std::vector<scene::VectorScene>& scenes,
                             const scene::SceneGenConfig& scene_cfg);

struct EvalResult {
  MetricsReport report;
  RunManifest manifest;
};

// Loads both files, checks that the dataset fits the model and evaluates.
EvalResult evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset);

// An output whose heads reproduce the scene's ground truth: every ego mode is
// the GT ego future, agents carry their GT futures and map queries the
// resampled GT polylines with confident classes.
model::ModelOutput ground_truth_output(const scene::VectorScene& s, const ModelConfig& cfg);

// Collision rate of the ground-truth ego futures themselves.
HorizonMetrics intrinsic_collision_rate(const std::vector<scene::VectorScene>& scenes);

// ---- ablation ----

struct AblationSpec {
  bool perception_intra = true;
  bool prediction_intra = true;
  bool planning_intra = true;
  bool masked_self_attention = true;
  bool operator==(const AblationSpec&) const = default;
};

// Six rows: all modules off, each intra-instance module removed in turn, plain
// self-attention everywhere, everything on.
std::vector<AblationSpec> standard_ablation_matrix();

ModelConfig apply(const AblationSpec& spec, ModelConfig cfg);

struct AblationRow {
  AblationSpec spec;
  std::optional<MetricsReport> report;  // empty when the run failed
  std::string error;
};

struct AblationOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // one checkpoint per row when set
  std::function<void(std::size_t row, const AblationRow&)> on_row;
};

std::vector<AblationRow> run_ablation(const std::vector<AblationSpec>& specs, const ModelConfig& base,
                                      const train::TrainConfig& tc, const scene::SceneGenConfig& scene_cfg,
                                      const std::vector<scene::VectorScene>& train_scenes,
                                      const std::vector<scene::VectorScene>& eval_scenes,
                                      const AblationOptions& opts = {});

// ---- reports ----

// DE in meters and CR in percent, both to 2 decimals.
std::string format_report(const MetricsReport& r);
std::string format_ablation(const std::vector<AblationRow>& rows);
std::string report_json(const MetricsReport& r);
std::string manifest_json(const RunManifest& m);
std::string ablation_json(const std::vector<AblationRow>& rows);

}  // namespace invd::eval
