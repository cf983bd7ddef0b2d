#include "invdriver/json_io.hpp"

#include "invdriver/training.hpp"

namespace invd::scene {

namespace {
template <class F>
void scene_fields(SceneGenConfig& c, F&& f) {
  f("range_forward", c.range_forward);
  f("range_backward", c.range_backward);
  f("range_lateral", c.range_lateral);
  f("resolution", c.resolution);
  f("lane_width", c.lane_width);
  f("lane_count_min", c.lane_count_min);
  f("lane_count_max", c.lane_count_max);
  f("agent_count_min", c.agent_count_min);
  f("agent_count_max", c.agent_count_max);
  f("curvature_max", c.curvature_max);
  f("straight_curvature", c.straight_curvature);
  f("speed_min", c.speed_min);
  f("speed_max", c.speed_max);
  f("agent_speed_noise", c.agent_speed_noise);
  f("ego_speed_noise", c.ego_speed_noise);
  f("position_noise", c.position_noise);
  f("dt", c.dt);
  f("history_steps", c.history_steps);
  f("future_steps", c.future_steps);
  f("command_threshold_deg", c.command_threshold_deg);
  f("point_spacing", c.point_spacing);
  f("train_scenes", c.train_scenes);
  f("eval_scenes", c.eval_scenes);
}
const auto kSceneVisit = [](SceneGenConfig& c, auto&& f) { scene_fields(c, f); };
}  // namespace

void to_json(nlohmann::json& j, const SceneGenConfig& cfg) { json_detail::write_fields(j, cfg, kSceneVisit); }
void from_json(const nlohmann::json& j, SceneGenConfig& cfg) {
  json_detail::read_fields(j, cfg, "SceneGenConfig", kSceneVisit);
}

}  // namespace invd::scene

namespace invd {

namespace {
const auto kModelVisit = [](ModelConfig& c, auto&& f) {
  f("M_I", c.M_I);
  f("M_P", c.M_P);
  f("N_O", c.N_O);
  f("N_I", c.N_I);
  f("N_P", c.N_P);
  f("K_I", c.K_I);
  f("K_P", c.K_P);
  f("d_model", c.d_model);
  f("n_heads", c.n_heads);
  f("n_layers", c.n_layers);
  f("map_classes", c.map_classes);
  f("bev_patch", c.bev_patch);
  f("map_scale", c.map_scale);
  f("step_scale", c.step_scale);
  f("perception_intra", c.perception_intra);
  f("prediction_intra", c.prediction_intra);
  f("planning_intra", c.planning_intra);
  f("masked_self_attention", c.masked_self_attention);
};
}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& cfg) { json_detail::write_fields(j, cfg, kModelVisit); }
void from_json(const nlohmann::json& j, ModelConfig& cfg) { json_detail::read_fields(j, cfg, "ModelConfig", kModelVisit); }

}  // namespace invd

namespace invd::train {

namespace {
const auto kWeightsVisit = [](LossWeights& w, auto&& f) {
  f("w_map_pts", w.w_map_pts);
  f("w_map_cls", w.w_map_cls);
  f("w_map_dir", w.w_map_dir);
  f("w_pred_pts", w.w_pred_pts);
  f("w_pred_cls", w.w_pred_cls);
  f("w_plan_pts", w.w_plan_pts);
  f("w_plan_dir", w.w_plan_dir);
  f("w_plan_cls", w.w_plan_cls);
};
const auto kTrainVisit = [](TrainConfig& c, auto&& f) {
  f("lr", c.lr);
  f("epochs", c.epochs);
  f("batch_size", c.batch_size);
  f("seed", c.seed);
  f("weights", c.weights);
  f("clip_norm", c.clip_norm);
  f("checkpoint_every", c.checkpoint_every);
};
}  // namespace

void to_json(nlohmann::json& j, const LossWeights& w) { json_detail::write_fields(j, w, kWeightsVisit); }
void from_json(const nlohmann::json& j, LossWeights& w) { json_detail::read_fields(j, w, "LossWeights", kWeightsVisit); }
void to_json(nlohmann::json& j, const TrainConfig& cfg) { json_detail::write_fields(j, cfg, kTrainVisit); }
void from_json(const nlohmann::json& j, TrainConfig& cfg) { json_detail::read_fields(j, cfg, "TrainConfig", kTrainVisit); }

}  // namespace invd::train
