#pragma once

// Perception, prediction and planning decoders with intra-instance masked
// self-attention, and the end-to-end forward pass that chains them.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "invdriver/bev.hpp"
#include "invdriver/mask.hpp"
#include "invdriver/model_config.hpp"
#include "invdriver/queries.hpp"
#include "invdriver/scene.hpp"
#include "invdriver/tensor.hpp"

namespace invd::model {

using ad::Tensor;

struct AttentionParams {
  Tensor w_q, b_q;
  Tensor w_k;  // no bias: a key bias shifts every logit of a row equally
  Tensor w_v, b_v;
  Tensor w_o, b_o;
};

struct NormParams {
  Tensor gain, bias;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

// Pre-norm residual attention sublayer: x + Attention(LN(x), context).
struct AttentionBlock {
  NormParams norm;
  AttentionParams attn;
};

struct DecoderLayerParams {
  std::vector<AttentionBlock> cross;  // one per context, applied in order
  AttentionBlock self_attn;
  NormParams ffn_norm;
  FeedForwardParams ffn;
};

// Multi-head scaled dot-product attention of `queries` [q, d] over `context` [k, d].
// With a mask [q, k], blocked pairs get exactly zero weight.
Tensor multi_head_attention(const Tensor& queries, const Tensor& context, const AttentionParams& p,
                            std::size_t n_heads, const IntraInstanceMask* mask);

// x + MHA(LN(x), LN(x), mask).
Tensor intra_instance_self_attention(const Tensor& x, const IntraInstanceMask& mask, const AttentionBlock& block,
                                     std::size_t n_heads);
// The initialization pass is the same operator with its own parameters.
inline Tensor query_initialization(const Tensor& x, const IntraInstanceMask& mask, const AttentionBlock& block,
                                   std::size_t n_heads) {
  return intra_instance_self_attention(x, mask, block, n_heads);
}
Tensor cross_attention(const Tensor& x, const Tensor& context, const AttentionBlock& block, std::size_t n_heads);
Tensor feed_forward(const Tensor& x, const NormParams& norm, const FeedForwardParams& ffn);

// cross-attention(s) -> masked self-attention -> feed-forward.
Tensor decoder_layer(const Tensor& x, std::span<const Tensor> contexts, const IntraInstanceMask& mask,
                     const DecoderLayerParams& layer, std::size_t n_heads);

struct AgentState {
  double x = 0.0, y = 0.0, heading = 0.0;
  double vx = 0.0, vy = 0.0;
  double length = 4.5, width = 1.8;
};
inline constexpr std::size_t kAgentFeatureCount = 9;

// Model inputs for one scene: BEV patch tokens plus the observed agent states.
struct SceneInputs {
  Tensor bev_patches;  // [rows * cols, patch * patch * channels], no gradient
  std::size_t token_rows = 0;
  std::size_t token_cols = 0;
  std::vector<AgentState> agents;
  scene::Command command = scene::Command::straight;
};

SceneInputs inputs_from_bev(const scene::BevGrid& grid, std::vector<AgentState> agents, scene::Command command,
                            const ModelConfig& cfg);
SceneInputs prepare_inputs(const scene::VectorScene& scene, const scene::SceneGenConfig& scene_cfg,
                           const ModelConfig& cfg);
AgentState observed_state(const scene::AgentTrack& track, double dt);

// 2-D sinusoidal encoding, first half of the channels for rows, second half for columns.
Tensor positional_encoding_2d(std::size_t rows, std::size_t cols, std::size_t d);

struct ModelOutput {
  Tensor map_points;              // [M_I, M_P, 2] meters
  Tensor map_class_logits;        // [M_I, classes + 1], last column = no-object
  std::size_t n_agents = 0;
  Tensor agent_trajectories;      // [n_agents, N_I, N_P, 2] meters; undefined when n_agents == 0
  Tensor agent_mode_logits;       // [n_agents, N_I]; undefined when n_agents == 0
  Tensor agent_existence_logits;  // [N_O]
  Tensor ego_trajectories;        // [K_I, K_P, 2] meters
  Tensor ego_mode_logits;         // [K_I]
  Tensor map_queries;             // [M_I * M_P, d] final perception queries
  Tensor motion_queries;          // [N_O * N_I * N_P, d] final prediction queries
};

// Replaces decoder outputs during a forward pass (used to verify what planning depends on).
struct ForwardOverrides {
  std::optional<Tensor> map_queries;
  std::optional<Tensor> motion_queries;
};

struct HeadParams {
  FeedForwardParams point_mlp;  // d -> d -> 2
  Tensor cls_w, cls_b;          // pooled queries -> logits
  Tensor exist_w, exist_b;      // prediction only: pooled agent queries -> existence logit
};

struct DecoderParams {
  query::QueryBank bank;
  std::optional<AttentionBlock> init;
  std::vector<DecoderLayerParams> layers;
  NormParams out_norm;
  HeadParams head;
};

struct PerceptionResult {
  Tensor queries, points, class_logits;
};
struct PredictionResult {
  Tensor queries, trajectories, mode_logits, existence_logits;  // trajectories/mode logits cover all N_O queries
};
struct PlanningResult {
  Tensor trajectories, mode_logits;
};

class InVDriverModel {
 public:
  InVDriverModel(const ModelConfig& cfg, std::uint64_t seed);
  // Copies would share parameter storage.
  InVDriverModel(const InVDriverModel&) = delete;
  InVDriverModel& operator=(const InVDriverModel&) = delete;
  InVDriverModel(InVDriverModel&&) = default;
  InVDriverModel& operator=(InVDriverModel&&) = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  ad::ParameterRegistry& registry() noexcept { return registry_; }
  const ad::ParameterRegistry& registry() const noexcept { return registry_; }

  // [rows * cols, d]: projected patches plus positional encoding.
  Tensor encode_bev(const SceneInputs& in) const;
  PerceptionResult perception_decoder(const Tensor& bev) const;
  PredictionResult prediction_decoder(const Tensor& bev, std::span<const AgentState> agents) const;
  PlanningResult planning_decoder(const Tensor& map_queries, const Tensor& motion_queries,
                                  scene::Command command) const;
  ModelOutput forward(const SceneInputs& in, const ForwardOverrides& overrides = {}) const;

  // Masks actually used, after applying the ablation switches.
  const IntraInstanceMask& perception_mask() const noexcept { return perception_mask_; }
  const IntraInstanceMask& prediction_mask() const noexcept { return prediction_mask_; }
  const IntraInstanceMask& planning_mask() const noexcept { return planning_mask_; }

  DecoderParams perception;
  DecoderParams prediction;
  DecoderParams planning;
  Tensor bev_w, bev_b;      // patch features -> d
  Tensor agent_w, agent_b;  // observed agent state -> d
  Tensor command_embed;     // [3, d]

 private:
  Tensor run_decoder(const DecoderParams& dec, Tensor queries, std::span<const Tensor> contexts,
                     const IntraInstanceMask& mask) const;

  ModelConfig cfg_;
  ad::ParameterRegistry registry_;
  IntraInstanceMask perception_mask_, prediction_mask_, planning_mask_;
};

// Index of the ego mode trained and evaluated for a command.
std::size_t commanded_mode(scene::Command command, std::size_t modes);

}  // namespace invd::model
