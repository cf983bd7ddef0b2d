#pragma once

// Set matching, losses, optimizer and the end-to-end training loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "invdriver/model.hpp"
#include "invdriver/scene.hpp"
#include "invdriver/tensor.hpp"

namespace invd::train {

using ad::Tensor;

struct LossWeights {
  double w_map_pts = 1.0;
  double w_map_cls = 0.5;
  double w_map_dir = 1.0;
  double w_pred_pts = 1.0;
  double w_pred_cls = 0.5;  // also weights the existence term
  double w_plan_pts = 1.0;
  double w_plan_dir = 1.0;
  double w_plan_cls = 0.5;

  void validate() const;
  LossWeights scaled(double s) const;
  bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
  double lr = 2e-4;
  std::size_t epochs = 50;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  LossWeights weights;
  double clip_norm = 1.0;
  // Write a checkpoint every this many epochs (0: only at the end).
  std::size_t checkpoint_every = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// ---- matching ----

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> assignment;  // (prediction, ground truth), sorted by prediction
  std::vector<bool> reversed;                                    // per pair; map matching only
  double total_cost = 0.0;
};

// Minimum-cost injective assignment of min(n, m) pairs for a row-major [n, m] cost matrix.
MatchResult hungarian(const std::vector<double>& cost, std::size_t n, std::size_t m);

inline constexpr double kMatchClassCost = 1.0;

// Ground truth of one scene, prepared for the loss (polylines resampled to M_P points).
struct SceneTargets {
  std::vector<std::vector<scene::Point2>> map_points;
  std::vector<std::size_t> map_classes;
  std::vector<scene::Point2> agent_last;                    // last observed position per agent
  std::vector<std::vector<scene::Point2>> agent_futures;    // N_P points each
  std::vector<scene::Point2> ego_future;                    // K_P points
  scene::Command command = scene::Command::straight;
};

SceneTargets make_targets(const scene::VectorScene& s, const ModelConfig& cfg);

// Mean over points of |dx| + |dy|.
double mean_point_l1(std::span<const double> a, std::span<const double> b);

// Cost = min over {forward, reversed} ground-truth order of mean point L1, plus
// kMatchClassCost * (1 - p(gt class)).
MatchResult match_map(const Tensor& map_points, const Tensor& class_logits, const SceneTargets& gt);

// ---- losses ----

// Unweighted component values; `total` carries the weighted sum and its graph.
struct LossBreakdown {
  Tensor total;
  double map_pts = 0, map_cls = 0, map_dir = 0;
  double pred_pts = 0, pred_cls = 0, pred_exist = 0;
  double plan_pts = 0, plan_dir = 0, plan_cls = 0;

  double total_value() const { return total.item(); }
};

LossBreakdown map_loss(const Tensor& map_points, const Tensor& class_logits, const SceneTargets& gt,
                       const MatchResult& match, const LossWeights& w);

struct PredictionMatch {
  MatchResult agents;              // (query slot, gt agent)
  std::vector<std::size_t> winner;  // winning mode per matched pair
};
PredictionMatch match_prediction(const model::ModelOutput& out, std::span<const model::AgentState> query_agents,
                                 const SceneTargets& gt);
LossBreakdown prediction_loss(const model::ModelOutput& out, const PredictionMatch& match, const SceneTargets& gt,
                              const LossWeights& w);

LossBreakdown planning_loss(const model::ModelOutput& out, const SceneTargets& gt, const LossWeights& w);

LossBreakdown total_loss(const model::ModelOutput& out, std::span<const model::AgentState> query_agents,
                         const SceneTargets& gt, const LossWeights& w);

// ---- optimizer ----

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(const ad::ParameterRegistry& reg);

  // Clips the global gradient norm to `clip_norm` (<= 0 disables), then applies
  // one Adam update. Throws NonFiniteError naming the first non-finite gradient.
  // Returns the pre-clip gradient norm.
  double step(ad::ParameterRegistry& reg, double lr, double clip_norm);

  std::uint64_t steps() const noexcept { return t_; }
  std::vector<std::vector<double>>& first_moments() noexcept { return m_; }
  std::vector<std::vector<double>>& second_moments() noexcept { return v_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }

 private:
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- training loop ----

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double total = 0, map_pts = 0, map_cls = 0, map_dir = 0, pred_pts = 0, pred_cls = 0, pred_exist = 0, plan_pts = 0,
         plan_dir = 0, plan_cls = 0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainState {
  ModelConfig model_config;
  TrainConfig train_config;
  scene::SceneGenConfig scene_config;
  std::size_t epochs_done = 0;
  std::vector<EpochRecord> history;
  model::InVDriverModel model;
  Adam optimizer;

  TrainState(const ModelConfig& mc, const TrainConfig& tc, const scene::SceneGenConfig& sc);
};

// Throws ValidationError when the dataset cannot be fed to the model
// (horizon lengths, agent counts, BEV patching).
void check_compatible(const ModelConfig& mc, const scene::SceneGenConfig& sc);

// Scene order of one epoch; a pure function of (seed, epoch, count).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count);

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_path;
  std::optional<std::filesystem::path> history_csv;
  // Stop after this many total epochs even if the config asks for more (resume testing).
  std::optional<std::size_t> stop_after;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Runs the remaining epochs of `state` over `scenes`.
void train(TrainState& state, const std::vector<scene::VectorScene>& scenes, const TrainOptions& opts = {});

// ---- persistence ----

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

inline constexpr const char* kCheckpointMagic = "INVDCKPT";
inline constexpr int kCheckpointVersion = 1;

}  // namespace invd::train
