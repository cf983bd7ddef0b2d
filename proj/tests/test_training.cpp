#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "invdriver/errors.hpp"
#include "invdriver/ops.hpp"
#include "invdriver/training.hpp"
#include "test_util.hpp"

using namespace invd;
using namespace invd::ad;
using namespace invd::train;
using invd::testing::bitwise_equal;
using invd::testing::random_tensor;
using scene::Point2;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "invdriver_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Minimum over all injective assignments, summed in row order of the smaller side.
double brute_force_min(const std::vector<double>& c, std::size_t n, std::size_t m) {
  const bool flip = n > m;
  const std::size_t R = flip ? m : n, C = flip ? n : m;
  std::vector<std::size_t> cols(C);
  std::iota(cols.begin(), cols.end(), 0);
  double best = INFINITY;
  do {
    // Pairs in prediction order so the summation matches the solver's.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t r = 0; r < R; ++r) pairs.emplace_back(flip ? cols[r] : r, flip ? r : cols[r]);
    std::sort(pairs.begin(), pairs.end());
    double s = 0.0;
    for (auto [i, j] : pairs) s += c[i * m + j];
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

ModelConfig toy_model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.M_I = 4;
  c.M_P = 5;
  c.N_O = 6;
  c.N_I = 2;
  c.N_P = 6;
  c.K_I = 3;
  c.K_P = 6;
  c.bev_patch = 30;
  return c;
}

// Hand-assembled model output with the given values.
model::ModelOutput make_output(const ModelConfig& cfg, std::size_t n_agents, std::mt19937_64& rng) {
  model::ModelOutput o;
  o.map_points = random_tensor(rng, {cfg.M_I, cfg.M_P, 2}, true, -20, 20);
  o.map_class_logits = random_tensor(rng, {cfg.M_I, cfg.map_classes + 1}, true, -2, 2);
  o.n_agents = n_agents;
  if (n_agents) {
    o.agent_trajectories = random_tensor(rng, {n_agents, cfg.N_I, cfg.N_P, 2}, true, -20, 20);
    o.agent_mode_logits = random_tensor(rng, {n_agents, cfg.N_I}, true, -2, 2);
  }
  o.agent_existence_logits = random_tensor(rng, {cfg.N_O}, true, -2, 2);
  o.ego_trajectories = random_tensor(rng, {cfg.K_I, cfg.K_P, 2}, true, -5, 30);
  o.ego_mode_logits = random_tensor(rng, {cfg.K_I}, true, -2, 2);
  return o;
}

std::vector<model::AgentState> agent_states(const scene::VectorScene& s) {
  std::vector<model::AgentState> a;
  for (const auto& t : s.agents) a.push_back(model::observed_state(t, 0.5));
  return a;
}

double ce_oracle(std::span<const double> logits, std::size_t target) {
  double mx = -INFINITY;
  for (double l : logits) mx = std::max(mx, l);
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return std::log(z) + mx - logits[target];
}

double direction_oracle(std::span<const double> p, std::span<const double> g) {
  const std::size_t n = p.size() / 2;
  double s = 0.0;
  for (std::size_t e = 0; e + 1 < n; ++e) {
    const double px = p[2 * e + 2] - p[2 * e], py = p[2 * e + 3] - p[2 * e + 1];
    const double gx = g[2 * e + 2] - g[2 * e], gy = g[2 * e + 3] - g[2 * e + 1];
    const double gn = std::hypot(gx, gy), pn = std::hypot(px, py);
    if (gn == 0.0) continue;
    s += pn == 0.0 ? 1.0 : 1.0 - (px * gx + py * gy) / (pn * gn);
  }
  return s / static_cast<double>(n - 1);
}

std::vector<double> flat(const std::vector<Point2>& pts) {
  std::vector<double> v;
  for (auto p : pts) {
    v.push_back(p.x);
    v.push_back(p.y);
  }
  return v;
}

}  // namespace

TEST_CASE("hungarian") {
  SUBCASE("dominant diagonal") {
    std::vector<double> c(16, 10.0);
    for (int i = 0; i < 4; ++i) c[i * 4 + i] = 0.0;
    const auto r = hungarian(c, 4, 4);
    CHECK(r.total_cost == 0.0);
    for (std::size_t k = 0; k < 4; ++k) CHECK(r.assignment[k] == std::pair<std::size_t, std::size_t>{k, k});
  }
  SUBCASE("3x3 example equals brute force") {
    const std::vector<double> c{4, 1, 3, 2, 0, 5, 3, 2, 2};
    const auto r = hungarian(c, 3, 3);
    CHECK(r.total_cost == brute_force_min(c, 3, 3));
    CHECK(r.total_cost == 5.0);
  }
  SUBCASE("singleton and empty") {
    const auto r = hungarian({3.5}, 1, 1);
    REQUIRE(r.assignment.size() == 1);
    CHECK(r.assignment[0] == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(hungarian({}, 0, 4).assignment.empty());
  }
  SUBCASE("non-finite cost") { CHECK_THROWS_AS(hungarian({1.0, NAN}, 1, 2), InputError); }
  SUBCASE("200 random matrices up to 6x6") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 1 + rng() % 6, m = 1 + rng() % 6;
      std::vector<double> c(n * m);
      for (auto& x : c) x = u(rng);
      const auto r = hungarian(c, n, m);
      CHECK(r.assignment.size() == std::min(n, m));
      std::vector<bool> row(n), col(m);
      for (auto [i, j] : r.assignment) {
        CHECK_FALSE(row[i]);
        CHECK_FALSE(col[j]);
        row[i] = col[j] = true;
      }
      CHECK(r.total_cost == brute_force_min(c, n, m));
    }
  }
}

TEST_CASE("map matching") {
  const auto cfg = toy_model();
  SceneTargets gt;
  gt.map_points = {{{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}}, {{0, 5}, {2, 6}, {4, 7}, {6, 8}, {8, 9}}};
  gt.map_classes = {0, 1};
  std::vector<double> pts(cfg.M_I * cfg.M_P * 2, 50.0), logits(cfg.M_I * 3, 0.0);
  // Prediction 2 equals GT 0 exactly; prediction 0 equals GT 1 reversed.
  for (std::size_t k = 0; k < 5; ++k) {
    pts[(2 * 5 + k) * 2] = gt.map_points[0][k].x;
    pts[(2 * 5 + k) * 2 + 1] = gt.map_points[0][k].y;
    pts[(0 * 5 + k) * 2] = gt.map_points[1][4 - k].x;
    pts[(0 * 5 + k) * 2 + 1] = gt.map_points[1][4 - k].y;
  }
  logits[2 * 3 + 0] = 30.0;
  logits[0 * 3 + 1] = 30.0;
  const auto P = Tensor::from({cfg.M_I, cfg.M_P, 2}, pts, true);
  const auto L = Tensor::from({cfg.M_I, 3}, logits, true);
  const auto m = match_map(P, L, gt);
  REQUIRE(m.assignment.size() == 2);
  CHECK(m.assignment[0] == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK(m.reversed[0]);
  CHECK(m.assignment[1] == std::pair<std::size_t, std::size_t>{2, 0});
  CHECK_FALSE(m.reversed[1]);
  CHECK(m.total_cost < 1e-12);

  const auto b = map_loss(P, L, gt, m, LossWeights{});
  CHECK(b.map_pts == 0.0);
  CHECK(b.map_dir == doctest::Approx(0.0).epsilon(1e-12));

  SUBCASE("empty ground truth labels everything no-object") {
    SceneTargets none;
    const auto m0 = match_map(P, L, none);
    CHECK(m0.assignment.empty());
    const auto b0 = map_loss(P, L, none, m0, LossWeights{});
    double ce = 0.0;
    for (std::size_t i = 0; i < cfg.M_I; ++i) ce += ce_oracle(L.values().subspan(i * 3, 3), 2) / cfg.M_I;
    CHECK(b0.map_cls == doctest::Approx(ce).epsilon(1e-12));
    CHECK(b0.map_pts == 0.0);
  }
}

TEST_CASE("map_loss equals its recomputed components") {
  const auto cfg = toy_model();
  std::mt19937_64 rng(2);
  scene::SceneGenConfig sc;
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = scene::generate_scene(trial, sc);
    const auto gt = make_targets(s, cfg);
    const auto o = make_output(cfg, 0, rng);
    const auto m = match_map(o.map_points, o.map_class_logits, gt);
    LossWeights w;
    w.w_map_pts = 0.7;
    w.w_map_cls = 0.3;
    w.w_map_dir = 1.9;
    const auto b = map_loss(o.map_points, o.map_class_logits, gt, m, w);

    double pts = 0.0, dir = 0.0, cls = 0.0;
    std::vector<std::size_t> target(cfg.M_I, cfg.map_classes);
    for (std::size_t k = 0; k < m.assignment.size(); ++k) {
      const auto [i, g] = m.assignment[k];
      target[i] = gt.map_classes[g];
      auto ref = gt.map_points[g];
      if (m.reversed[k]) std::reverse(ref.begin(), ref.end());
      const auto rv = flat(ref);
      const auto pv = o.map_points.values().subspan(i * cfg.M_P * 2, cfg.M_P * 2);
      for (std::size_t j = 0; j < rv.size(); ++j) pts += std::abs(pv[j] - rv[j]);
      dir += direction_oracle(pv, rv);
    }
    const double npairs = static_cast<double>(m.assignment.size());
    pts /= npairs * cfg.M_P;
    dir /= npairs;
    for (std::size_t i = 0; i < cfg.M_I; ++i) cls += ce_oracle(o.map_class_logits.values().subspan(i * 3, 3), target[i]);
    cls /= cfg.M_I;
    CHECK(b.total_value() == doctest::Approx(0.7 * pts + 0.3 * cls + 1.9 * dir).epsilon(1e-10));
    CHECK(b.map_pts >= 0.0);
    CHECK(b.map_cls >= 0.0);
    CHECK(b.map_dir >= 0.0);

    LossWeights zero{0, 0, 0, 0, 0, 0, 0, 0};
    CHECK(map_loss(o.map_points, o.map_class_logits, gt, m, zero).total_value() == 0.0);
  }
}

TEST_CASE("direction loss examples") {
  const auto a = Tensor::from({3, 2}, {0, 0, 1, 1, 3, 1});
  const auto r = Tensor::from({3, 2}, {3, 1, 1, 1, 0, 0});
  const auto b = Tensor::from({3, 2}, {0, 0, -1, -1, -3, -1});
  CHECK(direction_loss(a, a).item() == doctest::Approx(0.0));
  CHECK(direction_loss(a, b).item() == doctest::Approx(2.0));
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_tensor(rng, {6, 2}), g = random_tensor(rng, {6, 2});
    CHECK(direction_loss(p, g).item() == doctest::Approx(direction_oracle(p.values(), g.values())).epsilon(1e-12));
  }
  (void)r;
}

TEST_CASE("prediction loss") {
  const auto cfg = toy_model();
  scene::SceneGenConfig sc;
  std::mt19937_64 rng(4);
  SUBCASE("winning mode equals brute-force minimum") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = scene::generate_scene(100 + trial, sc);
      const auto gt = make_targets(s, cfg);
      const auto states = agent_states(s);
      const auto o = make_output(cfg, s.agents.size(), rng);
      const auto pm = match_prediction(o, states, gt);
      REQUIRE(pm.agents.assignment.size() == s.agents.size());
      for (std::size_t k = 0; k < pm.agents.assignment.size(); ++k) {
        const auto [q, g] = pm.agents.assignment[k];
        CHECK(q == g);
        double best = INFINITY;
        std::size_t arg = 0;
        for (std::size_t mode = 0; mode < cfg.N_I; ++mode) {
          double c = 0.0;
          for (std::size_t t = 0; t < cfg.N_P; ++t) {
            c += std::abs(o.agent_trajectories[((q * cfg.N_I + mode) * cfg.N_P + t) * 2] - gt.agent_futures[g][t].x);
            c += std::abs(o.agent_trajectories[((q * cfg.N_I + mode) * cfg.N_P + t) * 2 + 1] - gt.agent_futures[g][t].y);
          }
          if (c < best) {
            best = c;
            arg = mode;
          }
        }
        CHECK(pm.winner[k] == arg);
      }
      const auto b = prediction_loss(o, pm, gt, LossWeights{});
      CHECK(b.pred_pts >= 0.0);
      CHECK(b.pred_cls >= 0.0);
      CHECK(b.pred_exist >= 0.0);
    }
  }
  SUBCASE("exact mode gives zero regression and is the class target") {
    const auto s = scene::generate_scene(7, sc);
    REQUIRE(!s.agents.empty());
    const auto gt = make_targets(s, cfg);
    auto o = make_output(cfg, s.agents.size(), rng);
    auto v = o.agent_trajectories.mutable_values();
    for (std::size_t a = 0; a < s.agents.size(); ++a)
      for (std::size_t t = 0; t < cfg.N_P; ++t) {
        v[((a * cfg.N_I + 1) * cfg.N_P + t) * 2] = gt.agent_futures[a][t].x;
        v[((a * cfg.N_I + 1) * cfg.N_P + t) * 2 + 1] = gt.agent_futures[a][t].y;
      }
    const auto pm = match_prediction(o, agent_states(s), gt);
    for (auto w : pm.winner) CHECK(w == 1);
    const auto b = prediction_loss(o, pm, gt, LossWeights{});
    CHECK(b.pred_pts == 0.0);
    double ce = 0.0;
    for (std::size_t a = 0; a < s.agents.size(); ++a) ce += ce_oracle(o.agent_mode_logits.values().subspan(a * cfg.N_I, cfg.N_I), 1);
    CHECK(b.pred_cls == doctest::Approx(ce / s.agents.size()).epsilon(1e-12));
  }
  SUBCASE("no agents leaves only the existence term") {
    scene::SceneGenConfig none = sc;
    none.agent_count_min = none.agent_count_max = 0;
    const auto s = scene::generate_scene(3, none);
    const auto gt = make_targets(s, cfg);
    const auto o = make_output(cfg, 0, rng);
    const auto pm = match_prediction(o, {}, gt);
    const auto b = prediction_loss(o, pm, gt, LossWeights{});
    double bce = 0.0;
    for (double x : o.agent_existence_logits.values()) bce += std::log1p(std::exp(x)) / cfg.N_O;
    CHECK(b.pred_exist == doctest::Approx(bce).epsilon(1e-12));
    CHECK(b.total_value() == doctest::Approx(0.5 * bce).epsilon(1e-12));
    CHECK(b.pred_pts == 0.0);
    CHECK(b.pred_cls == 0.0);
  }
}

TEST_CASE("planning loss") {
  const auto cfg = toy_model();
  scene::SceneGenConfig sc;
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = scene::generate_scene(200 + trial, sc);
    const auto gt = make_targets(s, cfg);
    auto o = make_output(cfg, 0, rng);
    const std::size_t mode = model::commanded_mode(s.command, cfg.K_I);
    const auto gv = flat(gt.ego_future);
    const auto pv = o.ego_trajectories.values().subspan(mode * cfg.K_P * 2, cfg.K_P * 2);
    double pts = 0.0;
    for (std::size_t j = 0; j < gv.size(); ++j) pts += std::abs(pv[j] - gv[j]);
    pts /= cfg.K_P;
    const double dir = direction_oracle(pv, gv);
    const double cls = ce_oracle(o.ego_mode_logits.values(), mode);
    LossWeights w;
    w.w_plan_pts = 1.3;
    w.w_plan_dir = 0.4;
    w.w_plan_cls = 2.2;
    CHECK(planning_loss(o, gt, w).total_value() == doctest::Approx(1.3 * pts + 0.4 * dir + 2.2 * cls).epsilon(1e-10));
    CHECK(planning_loss(o, gt, LossWeights{0, 0, 0, 0, 0, 0, 0, 0}).total_value() == 0.0);

    // Exact commanded mode: geometric terms vanish.
    auto v = o.ego_trajectories.mutable_values();
    std::copy(gv.begin(), gv.end(), v.begin() + mode * cfg.K_P * 2);
    const auto b = planning_loss(o, gt, w);
    CHECK(b.plan_pts == 0.0);
    CHECK(b.plan_dir == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("total loss is additive and linear in the weights") {
  const auto cfg = toy_model();
  scene::SceneGenConfig sc;
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = scene::generate_scene(300 + trial, sc);
    const auto gt = make_targets(s, cfg);
    const auto states = agent_states(s);
    const auto o = make_output(cfg, s.agents.size(), rng);
    LossWeights w, w2;
    w2.w_map_pts = 0.1;
    w2.w_pred_cls = 3.0;
    w2.w_plan_dir = 0.0;
    const auto t = total_loss(o, states, gt, w);
    const double parts = map_loss(o.map_points, o.map_class_logits, gt, match_map(o.map_points, o.map_class_logits, gt), w).total_value() +
                         prediction_loss(o, match_prediction(o, states, gt), gt, w).total_value() +
                         planning_loss(o, gt, w).total_value();
    CHECK(t.total_value() == doctest::Approx(parts).epsilon(1e-10));
    CHECK(total_loss(o, states, gt, w.scaled(2.0)).total_value() == doctest::Approx(2.0 * t.total_value()).epsilon(1e-12));
    LossWeights sum = w;
    sum.w_map_pts += w2.w_map_pts;
    sum.w_map_cls += w2.w_map_cls;
    sum.w_map_dir += w2.w_map_dir;
    sum.w_pred_pts += w2.w_pred_pts;
    sum.w_pred_cls += w2.w_pred_cls;
    sum.w_plan_pts += w2.w_plan_pts;
    sum.w_plan_dir += w2.w_plan_dir;
    sum.w_plan_cls += w2.w_plan_cls;
    CHECK(total_loss(o, states, gt, sum).total_value() ==
          doctest::Approx(t.total_value() + total_loss(o, states, gt, w2).total_value()).epsilon(1e-10));
    for (double v : {t.map_pts, t.map_cls, t.map_dir, t.pred_pts, t.pred_cls, t.pred_exist, t.plan_pts, t.plan_dir,
                     t.plan_cls})
      CHECK(v >= 0.0);
  }
}

TEST_CASE("Adam") {
  SUBCASE("first step moves by lr") {
    ParameterRegistry reg;
    auto w = reg.add("w", {1});
    w.mutable_values()[0] = 1.0;
    Adam opt(reg);
    mul(w, w).backward();
    opt.step(reg, 0.1, 1.0);
    CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-8));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterRegistry reg;
    auto w = reg.add("w", {3});
    w.mutable_values()[1] = 2.0;
    Adam opt(reg);
    reg.zero_grad();
    opt.step(reg, 0.1, 1.0);
    CHECK(w[0] == 0.0);
    CHECK(w[1] == 2.0);
  }
  SUBCASE("clipping bounds the global norm") {
    ParameterRegistry reg;
    auto w = reg.add("w", {2});
    Adam opt(reg);
    w.mutable_grad()[0] = 30.0;
    w.mutable_grad()[1] = 40.0;
    CHECK(opt.step(reg, 0.1, 1.0) == doctest::Approx(50.0));
    CHECK(opt.first_moments()[0][0] == doctest::Approx(0.1 * 0.6));
    CHECK(opt.first_moments()[0][1] == doctest::Approx(0.1 * 0.8));
  }
  SUBCASE("non-finite gradient names the parameter") {
    ParameterRegistry reg;
    reg.add("fine", {1});
    auto bad = reg.add("broken", {2});
    Adam opt(reg);
    bad.mutable_grad()[1] = NAN;
    try {
      opt.step(reg, 0.1, 1.0);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(std::string(e.what()).find("broken") != std::string::npos);
    }
  }
}

TEST_CASE("configuration validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = {};
  tc.lr = 0.0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = {};
  tc.weights = LossWeights{0, 0, 0, 0, 0, 0, 0, 0};
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = {};
  tc.weights.w_map_cls = -1.0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);

  ModelConfig mc;
  scene::SceneGenConfig sc;
  CHECK_NOTHROW(check_compatible(mc, sc));
  sc.future_steps = 5;
  CHECK_THROWS_AS(check_compatible(mc, sc), ValidationError);
  sc = {};
  mc.N_O = 4;
  CHECK_THROWS_AS(check_compatible(mc, sc), ValidationError);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(0, 3, 50), b = epoch_order(0, 3, 50), c = epoch_order(0, 4, 50);
  CHECK(a == b);
  CHECK(a != c);
  auto s = a;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(s[i] == i);
}

TEST_CASE("gradient reaches every parameter under the default configuration") {
  ModelConfig mc;
  scene::SceneGenConfig sc;
  model::InVDriverModel m(mc, 0);
  const auto s = scene::generate_scene(1, sc);
  REQUIRE(!s.agents.empty());
  const auto in = model::prepare_inputs(s, sc, mc);
  const auto loss = total_loss(m.forward(in), in.agents, make_targets(s, mc), LossWeights{});
  loss.total.backward();
  std::vector<std::string> dead;
  for (const auto& p : m.registry().params()) {
    double n = 0.0;
    for (double g : p.tensor.grad()) n += g * g;
    if (!(n > 0.0)) dead.push_back(p.name);
  }
  CHECK_MESSAGE(dead.empty(), (dead.empty() ? std::string() : dead.front()));
}

TEST_CASE("training loop, checkpoints and resume") {
  auto mc = toy_model();
  mc.M_I = 3;
  mc.M_P = 4;
  scene::SceneGenConfig sc;
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 2;
  tc.lr = 1e-3;
  tc.seed = 9;
  const auto scenes = scene::generate_scenes(0, 6, sc);

  TrainState full(mc, tc, sc);
  const auto ckpt_full = temp_path("full.ckpt"), csv = temp_path("history.csv");
  TrainOptions opts;
  opts.checkpoint_path = ckpt_full;
  opts.history_csv = csv;
  train::train(full, scenes, opts);
  REQUIRE(full.history.size() == 4);
  CHECK(full.epochs_done == 4);
  CHECK(full.optimizer.steps() == 12);

  SUBCASE("resume reproduces the uninterrupted run bitwise") {
    TrainState first(mc, tc, sc);
    const auto ckpt_half = temp_path("half.ckpt");
    TrainOptions o1;
    o1.checkpoint_path = ckpt_half;
    o1.stop_after = 2;
    train::train(first, scenes, o1);
    CHECK(first.epochs_done == 2);
    auto resumed = load_checkpoint(ckpt_half);
    CHECK(resumed.epochs_done == 2);
    train::train(resumed, scenes);
    CHECK(resumed.history == full.history);
    const auto& a = resumed.model.registry().params();
    const auto& b = full.model.registry().params();
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(bitwise_equal(a[k].tensor.values(), b[k].tensor.values()));
  }
  SUBCASE("checkpoint round trip is lossless") {
    const auto back = load_checkpoint(ckpt_full);
    CHECK(back.model_config == mc);
    CHECK(back.train_config == tc);
    CHECK(back.scene_config == sc);
    CHECK(back.history == full.history);
    CHECK(back.optimizer.steps() == full.optimizer.steps());
    const auto& a = back.model.registry().params();
    const auto& b = full.model.registry().params();
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(bitwise_equal(a[k].tensor.values(), b[k].tensor.values()));
      CHECK(bitwise_equal(back.optimizer.first_moments()[k], full.optimizer.first_moments()[k]));
      CHECK(bitwise_equal(back.optimizer.second_moments()[k], full.optimizer.second_moments()[k]));
    }
    const auto again = temp_path("again.ckpt");
    save_checkpoint(back, again);
    std::ifstream f1(ckpt_full, std::ios::binary), f2(again, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
  }
  SUBCASE("identical seeds give identical checkpoints") {
    TrainState again(mc, tc, sc);
    const auto path = temp_path("twin.ckpt");
    TrainOptions o;
    o.checkpoint_path = path;
    train::train(again, scenes, o);
    std::ifstream f1(ckpt_full, std::ios::binary), f2(path, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
  }
  SUBCASE("history CSV") {
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,total,map_pts,map_cls,map_dir,pred_pts,pred_cls,pred_exist,plan_pts,plan_dir,plan_cls");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 4);
  }
  SUBCASE("corrupt checkpoints are rejected") {
    const auto bad = temp_path("bad.ckpt");
    std::ofstream(bad, std::ios::binary) << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(bad), InputError);
    std::ifstream f(ckpt_full, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), {});
    bytes.resize(bytes.size() - 100);
    std::ofstream(bad, std::ios::binary | std::ios::trunc) << bytes;
    CHECK_THROWS_AS(load_checkpoint(bad), InputError);
  }
  SUBCASE("empty dataset") {
    TrainState st(mc, tc, sc);
    CHECK_THROWS_AS(train::train(st, {}), ValidationError);
  }
}
