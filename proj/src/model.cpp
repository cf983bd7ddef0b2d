#include "invdriver/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "invdriver/errors.hpp"
#include "invdriver/ops.hpp"

namespace invd::model {

using namespace invd::ad;

Tensor multi_head_attention(const Tensor& queries, const Tensor& context, const AttentionParams& p,
                            std::size_t n_heads, const IntraInstanceMask* mask) {
  if (queries.rank() != 2 || context.rank() != 2 || queries.dim(1) != context.dim(1))
    throw DimensionError("attention expects [q, d] and [k, d], got " + shape_str(queries.shape()) + " and " +
                         shape_str(context.shape()));
  const std::size_t q = queries.dim(0), k = context.dim(0), d = queries.dim(1);
  if (!n_heads || d % n_heads) throw DimensionError("d_model not divisible by head count");
  const std::size_t dh = d / n_heads;
  if (mask && (mask->rows() != q || mask->cols() != k))
    throw DimensionError("mask " + std::to_string(mask->rows()) + "x" + std::to_string(mask->cols()) +
                         " does not match attention " + std::to_string(q) + "x" + std::to_string(k));

  const Tensor zero_bias = Tensor::zeros({d});
  auto heads = [&](const Tensor& x, std::size_t rows) { return swap_axes01(reshape(x, {rows, n_heads, dh})); };
  // The 1/sqrt(dh) temperature is applied to Q, which is cheaper than scaling the [H, q, k] logits.
  const Tensor qh = heads(scale(linear(queries, p.w_q, p.b_q), 1.0 / std::sqrt(static_cast<double>(dh))), q);
  const Tensor kh = heads(linear(context, p.w_k, zero_bias), k);
  const Tensor vh = heads(linear(context, p.w_v, p.b_v), k);

  const Tensor logits = matmul(qh, transpose_last2(kh));
  const Tensor weights = mask ? masked_softmax(logits, *mask) : softmax(logits);
  const Tensor mixed = reshape(swap_axes01(matmul(weights, vh)), {q, d});
  return linear(mixed, p.w_o, p.b_o);
}

Tensor intra_instance_self_attention(const Tensor& x, const IntraInstanceMask& mask, const AttentionBlock& block,
                                     std::size_t n_heads) {
  const Tensor h = layer_norm(x, block.norm.gain, block.norm.bias);
  return add(x, multi_head_attention(h, h, block.attn, n_heads, &mask));
}

Tensor cross_attention(const Tensor& x, const Tensor& context, const AttentionBlock& block, std::size_t n_heads) {
  const Tensor h = layer_norm(x, block.norm.gain, block.norm.bias);
  return add(x, multi_head_attention(h, context, block.attn, n_heads, nullptr));
}

Tensor feed_forward(const Tensor& x, const NormParams& norm, const FeedForwardParams& ffn) {
  const Tensor h = layer_norm(x, norm.gain, norm.bias);
  return add(x, linear(relu(linear(h, ffn.w1, ffn.b1)), ffn.w2, ffn.b2));
}

Tensor decoder_layer(const Tensor& x, std::span<const Tensor> contexts, const IntraInstanceMask& mask,
                     const DecoderLayerParams& layer, std::size_t n_heads) {
  if (contexts.size() != layer.cross.size())
    throw DimensionError("decoder layer expects " + std::to_string(layer.cross.size()) + " contexts, got " +
                         std::to_string(contexts.size()));
  Tensor h = x;
  for (std::size_t i = 0; i < contexts.size(); ++i) h = cross_attention(h, contexts[i], layer.cross[i], n_heads);
  h = intra_instance_self_attention(h, mask, layer.self_attn, n_heads);
  return feed_forward(h, layer.ffn_norm, layer.ffn);
}

// ---- inputs ----

AgentState observed_state(const scene::AgentTrack& track, double dt) {
  if (track.history.empty()) throw InputError("agent track without history");
  const auto& cur = track.history.back();
  AgentState s;
  s.x = cur.x;
  s.y = cur.y;
  s.heading = cur.heading;
  if (track.history.size() >= 2) {
    const auto& prev = track.history[track.history.size() - 2];
    s.vx = (cur.x - prev.x) / dt;
    s.vy = (cur.y - prev.y) / dt;
  }
  s.length = track.length;
  s.width = track.width;
  return s;
}

SceneInputs inputs_from_bev(const scene::BevGrid& grid, std::vector<AgentState> agents, scene::Command command,
                            const ModelConfig& cfg) {
  const std::size_t P = cfg.bev_patch;
  if (grid.height % P || grid.width % P)
    throw ValidationError("BEV grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                          " is not divisible by bev_patch " + std::to_string(P));
  if (agents.size() > cfg.N_O)
    throw InputError("scene has " + std::to_string(agents.size()) + " agents, model supports N_O = " +
                     std::to_string(cfg.N_O));
  const std::size_t C = scene::kBevChannelCount;
  const std::size_t rows = grid.height / P, cols = grid.width / P, F = P * P * C;
  std::vector<double> feat(rows * cols * F);
  for (std::size_t tr = 0; tr < rows; ++tr)
    for (std::size_t tc = 0; tc < cols; ++tc) {
      double* out = feat.data() + (tr * cols + tc) * F;
      for (std::size_t dr = 0; dr < P; ++dr)
        for (std::size_t dc = 0; dc < P; ++dc)
          for (std::size_t ch = 0; ch < C; ++ch) {
            double v = grid.at(tr * P + dr, tc * P + dc, ch);
            if (ch == scene::kVelocityXChannel || ch == scene::kVelocityYChannel) v /= 10.0;
            *out++ = v;
          }
    }
  SceneInputs in;
  in.bev_patches = Tensor::from({rows * cols, F}, std::move(feat));
  in.token_rows = rows;
  in.token_cols = cols;
  in.agents = std::move(agents);
  in.command = command;
  return in;
}

SceneInputs prepare_inputs(const scene::VectorScene& s, const scene::SceneGenConfig& scene_cfg,
                           const ModelConfig& cfg) {
  std::vector<AgentState> agents;
  agents.reserve(s.agents.size());
  for (const auto& a : s.agents) agents.push_back(observed_state(a, scene_cfg.dt));
  return inputs_from_bev(scene::rasterize_bev(s, scene_cfg), std::move(agents), s.command, cfg);
}

Tensor positional_encoding_2d(std::size_t rows, std::size_t cols, std::size_t d) {
  if (d % 4) throw DimensionError("positional encoding width must be divisible by 4");
  const std::size_t quarter = d / 4;
  std::vector<double> pe(rows * cols * d);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double* out = pe.data() + (r * cols + c) * d;
      for (std::size_t k = 0; k < quarter; ++k) {
        const double f = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(quarter));
        out[2 * k] = std::sin(r * f);
        out[2 * k + 1] = std::cos(r * f);
        out[d / 2 + 2 * k] = std::sin(c * f);
        out[d / 2 + 2 * k + 1] = std::cos(c * f);
      }
    }
  return Tensor::from({rows * cols, d}, std::move(pe));
}

std::size_t commanded_mode(scene::Command command, std::size_t modes) {
  return static_cast<std::size_t>(command) % modes;
}

// ---- parameters ----

namespace {

class Builder {
 public:
  Builder(ParameterRegistry& reg, std::uint64_t seed) : reg_(reg), rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  Tensor weight(const std::string& name, std::size_t in, std::size_t out) {
    auto t = reg_.add(name, {in, out});
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-a, a);
    for (auto& v : t.mutable_values()) v = u(rng_);
    return t;
  }
  Tensor bias(const std::string& name, std::size_t n) { return reg_.add(name, {n}); }
  NormParams norm(const std::string& name, std::size_t d) {
    NormParams n{reg_.add(name + ".gain", {d}), reg_.add(name + ".bias", {d})};
    for (auto& v : n.gain.mutable_values()) v = 1.0;
    return n;
  }
  AttentionBlock attention(const std::string& name, std::size_t d) {
    AttentionBlock b;
    b.norm = norm(name + ".norm", d);
    b.attn.w_q = weight(name + ".w_q", d, d);
    b.attn.b_q = bias(name + ".b_q", d);
    b.attn.w_k = weight(name + ".w_k", d, d);
    b.attn.w_v = weight(name + ".w_v", d, d);
    b.attn.b_v = bias(name + ".b_v", d);
    b.attn.w_o = weight(name + ".w_o", d, d);
    b.attn.b_o = bias(name + ".b_o", d);
    return b;
  }
  FeedForwardParams mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out) {
    return {weight(name + ".w1", in, hidden), bias(name + ".b1", hidden), weight(name + ".w2", hidden, out),
            bias(name + ".b2", out)};
  }

  DecoderParams decoder(const std::string& name, const ModelConfig& cfg, std::size_t instances, std::size_t points,
                        std::size_t modes, std::size_t contexts, bool init, std::size_t cls_out) {
    const std::size_t d = cfg.d_model;
    DecoderParams dec;
    dec.bank = query::QueryBank::create(reg_, name, instances, points, modes, d, rng_);
    if (init) dec.init = attention(name + ".init", d);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string ln = name + ".layer" + std::to_string(l);
      DecoderLayerParams layer;
      for (std::size_t c = 0; c < contexts; ++c) layer.cross.push_back(attention(ln + ".cross" + std::to_string(c), d));
      layer.self_attn = attention(ln + ".self_attn", d);
      layer.ffn_norm = norm(ln + ".ffn_norm", d);
      layer.ffn = mlp(ln + ".ffn", d, 4 * d, d);
      dec.layers.push_back(std::move(layer));
    }
    dec.out_norm = norm(name + ".out_norm", d);
    dec.head.point_mlp = mlp(name + ".point_head", d, d, 2);
    dec.head.cls_w = weight(name + ".cls_head.w", d, cls_out);
    dec.head.cls_b = bias(name + ".cls_head.b", cls_out);
    return dec;
  }

 private:
  ParameterRegistry& reg_;
  std::mt19937_64 rng_;
};

Tensor point_head(const Tensor& q, const FeedForwardParams& m) {
  return linear(relu(linear(q, m.w1, m.b1)), m.w2, m.b2);
}

}  // namespace

InVDriverModel::InVDriverModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  Builder b(registry_, seed);
  const bool use_mask = cfg_.masked_self_attention;
  perception = b.decoder("perception", cfg_, cfg_.M_I, cfg_.M_P, 0, 1, cfg_.perception_intra, cfg_.map_classes + 1);
  prediction = b.decoder("prediction", cfg_, cfg_.N_O, cfg_.N_P, cfg_.N_I, 1, cfg_.prediction_intra, 1);
  prediction.head.exist_w = b.weight("prediction.exist_head.w", d, 1);
  prediction.head.exist_b = b.bias("prediction.exist_head.b", 1);
  planning = b.decoder("planning", cfg_, cfg_.K_I, cfg_.K_P, 0, 2, cfg_.planning_intra, 1);

  const std::size_t patch_features = cfg_.bev_patch * cfg_.bev_patch * scene::kBevChannelCount;
  bev_w = b.weight("bev_encoder.w", patch_features, d);
  bev_b = b.bias("bev_encoder.b", d);
  agent_w = b.weight("agent_encoder.w", kAgentFeatureCount, d);
  agent_b = b.bias("agent_encoder.b", d);
  command_embed = registry_.add("planning.command_embed", {scene::kCommandCount, d});
  std::normal_distribution<double> gauss(0.0, query::QueryBank::kInitStd);
  for (auto& v : command_embed.mutable_values()) v = gauss(b.rng());

  auto pick = [&](bool intra, IntraInstanceMask m) {
    return intra && use_mask ? std::move(m) : IntraInstanceMask::all_allowed(m.rows());
  };
  perception_mask_ = pick(cfg_.perception_intra, query::mask_for_perception(cfg_));
  prediction_mask_ = pick(cfg_.prediction_intra, query::mask_for_prediction(cfg_, cfg_.N_O));
  planning_mask_ = pick(cfg_.planning_intra, query::mask_for_planning(cfg_));
}

Tensor InVDriverModel::run_decoder(const DecoderParams& dec, Tensor q, std::span<const Tensor> contexts,
                                   const IntraInstanceMask& mask) const {
  if (dec.init) q = query_initialization(q, mask, *dec.init, cfg_.n_heads);
  for (const auto& layer : dec.layers) q = decoder_layer(q, contexts, mask, layer, cfg_.n_heads);
  return layer_norm(q, dec.out_norm.gain, dec.out_norm.bias);
}

Tensor InVDriverModel::encode_bev(const SceneInputs& in) const {
  if (!in.bev_patches.defined() || in.bev_patches.rank() != 2 || in.bev_patches.dim(1) != bev_w.dim(0) ||
      in.bev_patches.dim(0) != in.token_rows * in.token_cols)
    throw DimensionError("BEV patches do not match the encoder: expected [rows*cols, " +
                         std::to_string(bev_w.dim(0)) + "]");
  return add(linear(in.bev_patches, bev_w, bev_b), positional_encoding_2d(in.token_rows, in.token_cols, cfg_.d_model));
}

PerceptionResult InVDriverModel::perception_decoder(const Tensor& bev) const {
  const Tensor ctx[] = {bev};
  PerceptionResult r;
  r.queries = run_decoder(perception, query::compose_queries(perception.bank.instance, perception.bank.point), ctx,
                          perception_mask_);
  r.points = reshape(scale(point_head(r.queries, perception.head.point_mlp), cfg_.map_scale), {cfg_.M_I, cfg_.M_P, 2});
  const Tensor pooled = mean_axis1(reshape(r.queries, {cfg_.M_I, cfg_.M_P, cfg_.d_model}));
  r.class_logits = linear(pooled, perception.head.cls_w, perception.head.cls_b);
  return r;
}

PredictionResult InVDriverModel::prediction_decoder(const Tensor& bev, std::span<const AgentState> agents) const {
  if (agents.size() > cfg_.N_O)
    throw InputError("scene has " + std::to_string(agents.size()) + " agents, model supports N_O = " +
                     std::to_string(cfg_.N_O));
  const std::size_t NO = cfg_.N_O, NI = cfg_.N_I, NP = cfg_.N_P, d = cfg_.d_model;
  std::vector<double> feat(NO * kAgentFeatureCount, 0.0), anchor(NO * NI * NP * 2, 0.0);
  for (std::size_t o = 0; o < agents.size(); ++o) {
    const auto& a = agents[o];
    const double f[kAgentFeatureCount] = {a.x / 30.0, a.y / 30.0, std::cos(a.heading), std::sin(a.heading),
                                          a.vx / 10.0, a.vy / 10.0, 1.0, a.length / 5.0, a.width / 2.0};
    std::copy(std::begin(f), std::end(f), feat.begin() + o * kAgentFeatureCount);
    for (std::size_t i = 0; i < NI * NP; ++i) {
      anchor[(o * NI * NP + i) * 2] = a.x;
      anchor[(o * NI * NP + i) * 2 + 1] = a.y;
    }
  }
  const Tensor agent_embed =
      add(prediction.bank.instance, linear(Tensor::from({NO, kAgentFeatureCount}, std::move(feat)), agent_w, agent_b));
  const Tensor ctx[] = {bev};
  PredictionResult r;
  r.queries = run_decoder(prediction,
                          query::compose_motion_queries(agent_embed, prediction.bank.mode, prediction.bank.point), ctx,
                          prediction_mask_);
  const Tensor steps =
      reshape(scale(point_head(r.queries, prediction.head.point_mlp), cfg_.step_scale), {NO * NI, NP, 2});
  r.trajectories = add(reshape(cumsum_points(steps), {NO, NI, NP, 2}), Tensor::from({NO, NI, NP, 2}, std::move(anchor)));
  const Tensor per_mode = mean_axis1(reshape(r.queries, {NO * NI, NP, d}));
  r.mode_logits = reshape(linear(per_mode, prediction.head.cls_w, prediction.head.cls_b), {NO, NI});
  const Tensor per_agent = mean_axis1(reshape(r.queries, {NO, NI * NP, d}));
  r.existence_logits = reshape(linear(per_agent, prediction.head.exist_w, prediction.head.exist_b), {NO});
  return r;
}

PlanningResult InVDriverModel::planning_decoder(const Tensor& map_queries, const Tensor& motion_queries,
                                                scene::Command command) const {
  const std::size_t KI = cfg_.K_I, KP = cfg_.K_P, d = cfg_.d_model;
  const Tensor cmd = reshape(slice_rows(command_embed, static_cast<std::size_t>(command), 1), {d});
  const Tensor ego = add(planning.bank.instance, cmd);
  const Tensor ctx[] = {map_queries, motion_queries};
  const Tensor q = run_decoder(planning, query::compose_queries(ego, planning.bank.point), ctx, planning_mask_);
  PlanningResult r;
  const Tensor steps = reshape(scale(point_head(q, planning.head.point_mlp), cfg_.step_scale), {KI, KP, 2});
  r.trajectories = cumsum_points(steps);
  const Tensor pooled = mean_axis1(reshape(q, {KI, KP, d}));
  r.mode_logits = reshape(linear(pooled, planning.head.cls_w, planning.head.cls_b), {KI});
  return r;
}

ModelOutput InVDriverModel::forward(const SceneInputs& in, const ForwardOverrides& overrides) const {
  const Tensor bev = encode_bev(in);
  const auto perc = perception_decoder(bev);
  const auto pred = prediction_decoder(bev, in.agents);

  ModelOutput out;
  out.map_points = perc.points;
  out.map_class_logits = perc.class_logits;
  out.map_queries = overrides.map_queries ? *overrides.map_queries : perc.queries;
  out.motion_queries = overrides.motion_queries ? *overrides.motion_queries : pred.queries;
  out.n_agents = in.agents.size();
  if (out.n_agents) {
    out.agent_trajectories = slice_rows(pred.trajectories, 0, out.n_agents);
    out.agent_mode_logits = slice_rows(pred.mode_logits, 0, out.n_agents);
  }
  out.agent_existence_logits = pred.existence_logits;
  const auto plan = planning_decoder(out.map_queries, out.motion_queries, in.command);
  out.ego_trajectories = plan.trajectories;
  out.ego_mode_logits = plan.mode_logits;
  return out;
}

}  // namespace invd::model
