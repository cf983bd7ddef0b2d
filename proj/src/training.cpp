#include "invdriver/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "invdriver/errors.hpp"
#include "invdriver/json_io.hpp"
#include "invdriver/ops.hpp"

namespace invd::train {

using namespace invd::ad;
using scene::Point2;

void LossWeights::validate() const {
  const double all[] = {w_map_pts, w_map_cls, w_map_dir, w_pred_pts, w_pred_cls, w_plan_pts, w_plan_dir, w_plan_cls};
  bool any = false;
  for (double w : all) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("LossWeights: weights must be finite and >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw ValidationError("LossWeights: at least one weight must be positive");
}

LossWeights LossWeights::scaled(double s) const {
  return {w_map_pts * s, w_map_cls * s, w_map_dir * s, w_pred_pts * s,
          w_pred_cls * s, w_plan_pts * s, w_plan_dir * s, w_plan_cls * s};
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("TrainConfig: lr must be > 0");
  if (epochs < 1) throw ValidationError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
  if (!(clip_norm >= 0.0)) throw ValidationError("TrainConfig: clip_norm must be >= 0");
  weights.validate();
}

// ---- matching ----

MatchResult hungarian(const std::vector<double>& cost, std::size_t n, std::size_t m) {
  if (cost.size() != n * m) throw DimensionError("hungarian: cost has " + std::to_string(cost.size()) +
                                                 " entries, expected " + std::to_string(n * m));
  for (double c : cost)
    if (!std::isfinite(c)) throw InputError("hungarian: cost matrix contains a non-finite entry");
  MatchResult r;
  if (!n || !m) return r;

  // Shortest augmenting paths with row/column potentials; rows <= columns.
  const bool flip = n > m;
  const std::size_t R = flip ? m : n, C = flip ? n : m;
  auto a = [&](std::size_t i, std::size_t j) { return flip ? cost[j * m + i] : cost[i * m + j]; };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(R + 1, 0.0), v(C + 1, 0.0);
  std::vector<std::size_t> p(C + 1, 0), way(C + 1, 0);
  for (std::size_t i = 1; i <= R; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(C + 1, kInf);
    std::vector<bool> used(C + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= C; ++j)
        if (!used[j]) {
          const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (std::size_t j = 0; j <= C; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (std::size_t j = 1; j <= C; ++j)
    if (p[j]) {
      if (flip) r.assignment.emplace_back(j - 1, p[j] - 1);
      else r.assignment.emplace_back(p[j] - 1, j - 1);
    }
  std::sort(r.assignment.begin(), r.assignment.end());
  r.reversed.assign(r.assignment.size(), false);
  for (const auto& [i, j] : r.assignment) r.total_cost += cost[i * m + j];
  return r;
}

SceneTargets make_targets(const scene::VectorScene& s, const ModelConfig& cfg) {
  SceneTargets t;
  for (const auto& line : s.map) {
    t.map_points.push_back(scene::resample_polyline(line.points, cfg.M_P));
    t.map_classes.push_back(static_cast<std::size_t>(line.cls));
  }
  for (const auto& a : s.agents) {
    if (a.history.empty()) throw InputError("agent without history");
    if (a.future.size() != cfg.N_P)
      throw ValidationError("agent future has " + std::to_string(a.future.size()) + " points, model expects N_P = " +
                            std::to_string(cfg.N_P));
    t.agent_last.push_back({a.history.back().x, a.history.back().y});
    std::vector<Point2> f;
    for (const auto& p : a.future) f.push_back({p.x, p.y});
    t.agent_futures.push_back(std::move(f));
  }
  if (s.ego_future.size() != cfg.K_P)
    throw ValidationError("ego future has " + std::to_string(s.ego_future.size()) + " points, model expects K_P = " +
                          std::to_string(cfg.K_P));
  t.ego_future = s.ego_future;
  t.command = s.command;
  return t;
}

double mean_point_l1(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size() / 2);
}

namespace {

std::vector<double> flatten(const std::vector<Point2>& pts, bool reverse = false) {
  std::vector<double> out;
  out.reserve(pts.size() * 2);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const auto& p = pts[reverse ? pts.size() - 1 - k : k];
    out.push_back(p.x);
    out.push_back(p.y);
  }
  return out;
}

std::vector<double> softmax_rows(std::span<const double> logits, std::size_t C) {
  std::vector<double> p(logits.begin(), logits.end());
  for (std::size_t i = 0; i < p.size(); i += C) {
    const double mx = *std::max_element(p.begin() + i, p.begin() + i + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (p[i + c] = std::exp(p[i + c] - mx));
    for (std::size_t c = 0; c < C; ++c) p[i + c] /= z;
  }
  return p;
}

// Rows `idx` of x along axis 0, stacked.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  std::vector<Tensor> parts;
  parts.reserve(idx.size());
  for (std::size_t i : idx) parts.push_back(slice_rows(x, i, 1));
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

Tensor weighted(const Tensor& x, double w) { return scale(x, w); }

}  // namespace

MatchResult match_map(const Tensor& map_points, const Tensor& class_logits, const SceneTargets& gt) {
  const std::size_t n = map_points.dim(0), P = map_points.dim(1), G = gt.map_points.size();
  const std::size_t C = class_logits.dim(1);
  const auto probs = softmax_rows(class_logits.values(), C);
  std::vector<double> cost(n * G);
  std::vector<bool> rev(n * G);
  std::vector<std::vector<double>> fwd_t, rev_t;
  for (const auto& g : gt.map_points) {
    fwd_t.push_back(flatten(g));
    rev_t.push_back(flatten(g, true));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto pred = map_points.values().subspan(i * P * 2, P * 2);
    for (std::size_t g = 0; g < G; ++g) {
      const double f = mean_point_l1(pred, fwd_t[g]), r = mean_point_l1(pred, rev_t[g]);
      rev[i * G + g] = r < f;
      cost[i * G + g] = std::min(f, r) + kMatchClassCost * (1.0 - probs[i * C + gt.map_classes[g]]);
    }
  }
  auto m = hungarian(cost, n, G);
  for (std::size_t k = 0; k < m.assignment.size(); ++k) {
    const auto [i, g] = m.assignment[k];
    m.reversed[k] = rev[i * G + g];
  }
  return m;
}

LossBreakdown map_loss(const Tensor& map_points, const Tensor& class_logits, const SceneTargets& gt,
                       const MatchResult& match, const LossWeights& w) {
  const std::size_t n = map_points.dim(0), P = map_points.dim(1);
  const std::size_t no_object = class_logits.dim(1) - 1;
  LossBreakdown b;
  std::vector<std::size_t> targets(n, no_object);
  for (const auto& [i, g] : match.assignment) targets[i] = gt.map_classes[g];
  const Tensor cls = cross_entropy(class_logits, targets);
  b.map_cls = cls.item();
  b.total = weighted(cls, w.w_map_cls);

  if (!match.assignment.empty()) {
    std::vector<std::size_t> rows;
    std::vector<double> tgt;
    for (std::size_t k = 0; k < match.assignment.size(); ++k) {
      const auto [i, g] = match.assignment[k];
      rows.push_back(i);
      const auto t = flatten(gt.map_points[g], match.reversed[k]);
      tgt.insert(tgt.end(), t.begin(), t.end());
    }
    const std::size_t k = rows.size();
    const Tensor pred = gather_rows(map_points, rows);
    const Tensor target = Tensor::from({k, P, 2}, tgt);
    const Tensor pts = scale(l1_loss(pred, target), 2.0);
    Tensor dir = Tensor::scalar(0.0);
    for (std::size_t j = 0; j < k; ++j)
      dir = add(dir, reshape(direction_loss(reshape(slice_rows(pred, j, 1), {P, 2}),
                                            reshape(slice_rows(target, j, 1), {P, 2})),
                             {1}));
    dir = scale(dir, 1.0 / static_cast<double>(k));
    b.map_pts = pts.item();
    b.map_dir = dir.item();
    b.total = add(b.total, add(weighted(pts, w.w_map_pts), reshape(weighted(dir, w.w_map_dir), {1})));
  }
  return b;
}

PredictionMatch match_prediction(const model::ModelOutput& out, std::span<const model::AgentState> query_agents,
                                 const SceneTargets& gt) {
  const std::size_t n = out.n_agents, G = gt.agent_last.size();
  if (query_agents.size() != n) throw DimensionError("match_prediction: agent state count differs from output");
  std::vector<double> cost(n * G);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < G; ++g)
      cost[i * G + g] = std::abs(query_agents[i].x - gt.agent_last[g].x) + std::abs(query_agents[i].y - gt.agent_last[g].y);
  PredictionMatch pm;
  pm.agents = hungarian(cost, n, G);
  if (pm.agents.assignment.empty()) return pm;
  const std::size_t NI = out.agent_trajectories.dim(1), NP = out.agent_trajectories.dim(2);
  for (const auto& [q, g] : pm.agents.assignment) {
    const auto target = flatten(gt.agent_futures[g]);
    std::size_t best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < NI; ++k) {
      const double c = mean_point_l1(out.agent_trajectories.values().subspan((q * NI + k) * NP * 2, NP * 2), target);
      if (c < best_cost) {
        best_cost = c;
        best = k;
      }
    }
    pm.winner.push_back(best);
  }
  return pm;
}

LossBreakdown prediction_loss(const model::ModelOutput& out, const PredictionMatch& match, const SceneTargets& gt,
                              const LossWeights& w) {
  const std::size_t NO = out.agent_existence_logits.numel();
  LossBreakdown b;
  std::vector<double> exist(NO, 0.0);
  for (const auto& [q, g] : match.agents.assignment) exist[q] = 1.0;
  const Tensor ex = bce_with_logits(out.agent_existence_logits, exist);
  b.pred_exist = ex.item();
  b.total = weighted(ex, w.w_pred_cls);

  const auto& pairs = match.agents.assignment;
  if (!pairs.empty()) {
    const std::size_t NI = out.agent_trajectories.dim(1), NP = out.agent_trajectories.dim(2);
    std::vector<Tensor> picked;
    std::vector<double> tgt;
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto [q, g] = pairs[k];
      picked.push_back(slice_rows(reshape(slice_rows(out.agent_trajectories, q, 1), {NI, NP, 2}), match.winner[k], 1));
      const auto t = flatten(gt.agent_futures[g]);
      tgt.insert(tgt.end(), t.begin(), t.end());
      rows.push_back(q);
    }
    const Tensor pred = picked.size() == 1 ? picked[0] : concat_rows(picked);
    const Tensor pts = scale(l1_loss(pred, Tensor::from({pairs.size(), NP, 2}, tgt)), 2.0);
    const Tensor cls = cross_entropy(gather_rows(out.agent_mode_logits, rows), match.winner);
    b.pred_pts = pts.item();
    b.pred_cls = cls.item();
    b.total = add(b.total, add(weighted(pts, w.w_pred_pts), weighted(cls, w.w_pred_cls)));
  }
  return b;
}

LossBreakdown planning_loss(const model::ModelOutput& out, const SceneTargets& gt, const LossWeights& w) {
  const std::size_t KI = out.ego_trajectories.dim(0), KP = out.ego_trajectories.dim(1);
  const std::size_t mode = model::commanded_mode(gt.command, KI);
  const Tensor traj = reshape(slice_rows(out.ego_trajectories, mode, 1), {KP, 2});
  const Tensor target = Tensor::from({KP, 2}, flatten(gt.ego_future));
  const Tensor pts = scale(l1_loss(traj, target), 2.0);
  const Tensor dir = direction_loss(traj, target);
  const std::size_t tg[] = {mode};
  const Tensor cls = cross_entropy(reshape(out.ego_mode_logits, {1, KI}), tg);
  LossBreakdown b;
  b.plan_pts = pts.item();
  b.plan_dir = dir.item();
  b.plan_cls = cls.item();
  b.total = add(add(weighted(pts, w.w_plan_pts), reshape(weighted(dir, w.w_plan_dir), {1})), weighted(cls, w.w_plan_cls));
  return b;
}

LossBreakdown total_loss(const model::ModelOutput& out, std::span<const model::AgentState> query_agents,
                         const SceneTargets& gt, const LossWeights& w) {
  const auto mm = match_map(out.map_points, out.map_class_logits, gt);
  const auto a = map_loss(out.map_points, out.map_class_logits, gt, mm, w);
  const auto b = prediction_loss(out, match_prediction(out, query_agents, gt), gt, w);
  const auto c = planning_loss(out, gt, w);
  LossBreakdown t;
  t.total = add(add(a.total, b.total), c.total);
  t.map_pts = a.map_pts;
  t.map_cls = a.map_cls;
  t.map_dir = a.map_dir;
  t.pred_pts = b.pred_pts;
  t.pred_cls = b.pred_cls;
  t.pred_exist = b.pred_exist;
  t.plan_pts = c.plan_pts;
  t.plan_dir = c.plan_dir;
  t.plan_cls = c.plan_cls;
  return t;
}

// ---- optimizer ----

Adam::Adam(const ParameterRegistry& reg) {
  for (const auto& p : reg.params()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

double Adam::step(ParameterRegistry& reg, double lr, double clip_norm) {
  auto& params = reg.params();
  if (params.size() != m_.size()) throw DimensionError("Adam state does not match the parameter registry");
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter " + p.name);
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto val = p.tensor.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    const bool has = p.tensor.has_grad();
    const double* g = has ? p.tensor.grad().data() : nullptr;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double gi = has ? g[i] * clip : 0.0;
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
      val[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
  }
  return norm;
}

// ---- training loop ----

TrainState::TrainState(const ModelConfig& mc, const TrainConfig& tc, const scene::SceneGenConfig& sc)
    : model_config(mc), train_config(tc), scene_config(sc), model(mc, tc.seed), optimizer(model.registry()) {
  tc.validate();
}

void check_compatible(const ModelConfig& mc, const scene::SceneGenConfig& sc) {
  mc.validate();
  sc.validate();
  if (static_cast<std::size_t>(sc.future_steps) != mc.N_P || static_cast<std::size_t>(sc.future_steps) != mc.K_P)
    throw ValidationError("dataset future_steps = " + std::to_string(sc.future_steps) + " but model N_P = " +
                          std::to_string(mc.N_P) + ", K_P = " + std::to_string(mc.K_P));
  if (static_cast<std::size_t>(sc.agent_count_max) > mc.N_O)
    throw ValidationError("dataset allows " + std::to_string(sc.agent_count_max) + " agents but model N_O = " +
                          std::to_string(mc.N_O));
  const auto empty = scene::BevGrid::empty(sc);
  if (empty.height % mc.bev_patch || empty.width % mc.bev_patch)
    throw ValidationError("BEV grid " + std::to_string(empty.height) + "x" + std::to_string(empty.width) +
                          " is not divisible by bev_patch " + std::to_string(mc.bev_patch));
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + epoch + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  std::mt19937_64 rng(z ^ (z >> 31));
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

namespace {

void accumulate(EpochRecord& r, const LossBreakdown& b) {
  r.total += b.total_value();
  r.map_pts += b.map_pts;
  r.map_cls += b.map_cls;
  r.map_dir += b.map_dir;
  r.pred_pts += b.pred_pts;
  r.pred_cls += b.pred_cls;
  r.pred_exist += b.pred_exist;
  r.plan_pts += b.plan_pts;
  r.plan_dir += b.plan_dir;
  r.plan_cls += b.plan_cls;
}

void divide(EpochRecord& r, double n) {
  for (double* f : {&r.total, &r.map_pts, &r.map_cls, &r.map_dir, &r.pred_pts, &r.pred_cls, &r.pred_exist,
                    &r.plan_pts, &r.plan_dir, &r.plan_cls})
    *f /= n;
}

}  // namespace

void train(TrainState& state, const std::vector<scene::VectorScene>& scenes, const TrainOptions& opts) {
  if (scenes.empty()) throw ValidationError("training needs at least one scene");
  const auto& tc = state.train_config;
  tc.validate();
  check_compatible(state.model_config, state.scene_config);

  std::vector<model::SceneInputs> inputs;
  std::vector<SceneTargets> targets;
  inputs.reserve(scenes.size());
  targets.reserve(scenes.size());
  for (const auto& s : scenes) {
    inputs.push_back(model::prepare_inputs(s, state.scene_config, state.model_config));
    targets.push_back(make_targets(s, state.model_config));
  }

  auto& reg = state.model.registry();
  const std::size_t last = std::min(tc.epochs, opts.stop_after.value_or(tc.epochs));
  const double inv_batch = 1.0 / static_cast<double>(tc.batch_size);
  for (std::size_t epoch = state.epochs_done + 1; epoch <= last; ++epoch) {
    const auto order = epoch_order(tc.seed, epoch, scenes.size());
    EpochRecord rec;
    rec.epoch = epoch;
    reg.zero_grad();
    std::size_t in_batch = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t idx = order[k];
      const auto out = state.model.forward(inputs[idx]);
      const auto loss = total_loss(out, inputs[idx].agents, targets[idx], tc.weights);
      if (!std::isfinite(loss.total_value()))
        throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", scene index " +
                             std::to_string(idx) + " (seed " + std::to_string(scenes[idx].seed) + ")");
      (tc.batch_size == 1 ? loss.total : scale(loss.total, inv_batch)).backward();
      accumulate(rec, loss);
      if (++in_batch == tc.batch_size || k + 1 == order.size()) {
        state.optimizer.step(reg, tc.lr, tc.clip_norm);
        reg.zero_grad();
        in_batch = 0;
      }
    }
    divide(rec, static_cast<double>(scenes.size()));
    state.history.push_back(rec);
    state.epochs_done = epoch;
    if (opts.on_epoch) opts.on_epoch(rec);
    if (opts.checkpoint_path && tc.checkpoint_every && epoch % tc.checkpoint_every == 0)
      save_checkpoint(state, *opts.checkpoint_path);
  }
  if (opts.checkpoint_path) save_checkpoint(state, *opts.checkpoint_path);
  if (opts.history_csv) write_history_csv(state.history, *opts.history_csv);
}

// ---- persistence ----

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

nlohmann::json history_json(const std::vector<EpochRecord>& h) {
  auto arr = nlohmann::json::array();
  for (const auto& r : h)
    arr.push_back({{"epoch", r.epoch}, {"total", r.total}, {"map_pts", r.map_pts}, {"map_cls", r.map_cls},
                   {"map_dir", r.map_dir}, {"pred_pts", r.pred_pts}, {"pred_cls", r.pred_cls},
                   {"pred_exist", r.pred_exist}, {"plan_pts", r.plan_pts}, {"plan_dir", r.plan_dir},
                   {"plan_cls", r.plan_cls}});
  return arr;
}

std::vector<EpochRecord> history_from_json(const nlohmann::json& arr) {
  std::vector<EpochRecord> h;
  for (const auto& j : arr) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.total = j.at("total").get<double>();
    r.map_pts = j.at("map_pts").get<double>();
    r.map_cls = j.at("map_cls").get<double>();
    r.map_dir = j.at("map_dir").get<double>();
    r.pred_pts = j.at("pred_pts").get<double>();
    r.pred_cls = j.at("pred_cls").get<double>();
    r.pred_exist = j.at("pred_exist").get<double>();
    r.plan_pts = j.at("plan_pts").get<double>();
    r.plan_dir = j.at("plan_dir").get<double>();
    r.plan_cls = j.at("plan_cls").get<double>();
    h.push_back(r);
  }
  return h;
}

void write_doubles(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::span<double> v, const std::string& what) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw InputError("checkpoint truncated while reading " + what);
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  nlohmann::json header;
  header["schema"] = "invdriver-checkpoint";
  header["version"] = kCheckpointVersion;
  header["code_version"] = INVD_VERSION;
  header["model_config"] = state.model_config;
  header["train_config"] = state.train_config;
  header["scene_config"] = state.scene_config;
  header["epochs_done"] = state.epochs_done;
  header["optimizer_steps"] = state.optimizer.steps();
  header["history"] = history_json(state.history);
  auto tensors = nlohmann::json::array();
  for (const auto& p : state.model.registry().params()) tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  header["tensors"] = tensors;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto& params = state.model.registry().params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      write_doubles(out, params[k].tensor.values());
      write_doubles(out, state.optimizer.first_moments()[k]);
      write_doubles(out, state.optimizer.second_moments()[k]);
    }
    if (!out) throw RuntimeFailure("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw InputError(path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw InputError("corrupt checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw InputError("checkpoint truncated in header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("schema", "") != "invdriver-checkpoint") throw InputError("not an invdriver checkpoint");
  if (header.value("version", 0) != kCheckpointVersion)
    throw VersionError("checkpoint version " + header.value("version", nlohmann::json()).dump() + ", expected " +
                       std::to_string(kCheckpointVersion));
  ModelConfig mc;
  TrainConfig tc;
  scene::SceneGenConfig sc;
  try {
    mc = header.at("model_config").get<ModelConfig>();
    tc = header.at("train_config").get<TrainConfig>();
    sc = header.at("scene_config").get<scene::SceneGenConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint configuration: ") + e.what());
  }
  TrainState state(mc, tc, sc);
  state.epochs_done = header.at("epochs_done").get<std::size_t>();
  state.optimizer.set_steps(header.at("optimizer_steps").get<std::uint64_t>());
  state.history = history_from_json(header.at("history"));

  auto& params = state.model.registry().params();
  const auto& listed = header.at("tensors");
  if (listed.size() != params.size())
    throw InputError("checkpoint lists " + std::to_string(listed.size()) + " tensors, model has " +
                            std::to_string(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (listed[k].at("name").get<std::string>() != params[k].name ||
        listed[k].at("shape").get<ad::Shape>() != params[k].tensor.shape())
      throw InputError("checkpoint tensor " + std::to_string(k) + " does not match parameter " + params[k].name);
    read_doubles(in, params[k].tensor.mutable_values(), params[k].name);
    read_doubles(in, state.optimizer.first_moments()[k], params[k].name);
    read_doubles(in, state.optimizer.second_moments()[k], params[k].name);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InputError("trailing bytes after checkpoint payload");
  return state;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "epoch,total,map_pts,map_cls,map_dir,pred_pts,pred_cls,pred_exist,plan_pts,plan_dir,plan_cls\n";
  out.precision(17);
  for (const auto& r : history)
    out << r.epoch << ',' << r.total << ',' << r.map_pts << ',' << r.map_cls << ',' << r.map_dir << ',' << r.pred_pts
        << ',' << r.pred_cls << ',' << r.pred_exist << ',' << r.plan_pts << ',' << r.plan_dir << ',' << r.plan_cls
        << '\n';
}

}  // namespace invd::train
