#include "invdriver/checks.hpp"

#include <functional>
#include <random>

#include "invdriver/bev.hpp"
#include "invdriver/model.hpp"
#include "invdriver/ops.hpp"
#include "invdriver/queries.hpp"
#include "invdriver/training.hpp"

namespace invd::checks {

using namespace ad;

namespace {

// Values in [-hi, -lo] U [lo, hi], keeping clear of ReLU and L1 kinks.
void fill(Tensor t, std::mt19937_64& rng, double lo = 0.1, double hi = 1.5) {
  std::uniform_real_distribution<double> mag(lo, hi);
  for (auto& v : t.mutable_values()) v = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
}

Tensor constant(Shape shape, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  fill(t, rng);
  return t;
}

}  // namespace

std::vector<NamedReport> op_gradient_checks(double tolerance, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<NamedReport> out;
  auto run = [&](const std::string& name, std::vector<Shape> shapes,
                 const std::function<Tensor(const std::vector<Tensor>&)>& f) {
    ParameterRegistry reg;
    std::vector<Tensor> xs;
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      xs.push_back(reg.add("x" + std::to_string(k), shapes[k]));
      fill(xs.back(), rng);
    }
    // Fixed random coefficients, so no gradient is structurally zero.
    const Tensor coef = constant(f(xs).shape(), rng);
    auto loss = [&] {
      const Tensor y = f(xs);
      return y.numel() == 1 ? y : mean(mul(y, coef));
    };
    out.push_back({name, grad_check(loss, reg.params(), kGradStep, tolerance)});
  };

  const auto mask = query::build_intra_instance_mask(2, 3);
  const std::vector<std::size_t> classes{2, 0, 1, 2};
  const std::vector<double> binary{1.0, 0.0, 1.0, 0.0, 1.0};

  run("matmul", {{3, 4}, {4, 2}}, [](auto& x) { return matmul(x[0], x[1]); });
  run("matmul_batched", {{2, 3, 4}, {2, 4, 3}}, [](auto& x) { return matmul(x[0], x[1]); });
  run("matmul_broadcast", {{2, 3, 4}, {4, 2}}, [](auto& x) { return matmul(x[0], x[1]); });
  run("transpose_last2", {{2, 3, 4}}, [](auto& x) { return transpose_last2(x[0]); });
  run("add", {{3, 4}, {3, 4}}, [](auto& x) { return add(x[0], x[1]); });
  run("add_broadcast", {{2, 3, 4}, {4}}, [](auto& x) { return add(x[0], x[1]); });
  run("sub", {{3, 4}, {3, 4}}, [](auto& x) { return sub(x[0], x[1]); });
  run("mul", {{3, 4}, {3, 4}}, [](auto& x) { return mul(x[0], x[1]); });
  run("scale", {{3, 4}}, [](auto& x) { return scale(x[0], -1.7); });
  run("relu", {{4, 5}}, [](auto& x) { return relu(x[0]); });
  run("sum", {{3, 4}}, [](auto& x) { return sum(mul(x[0], x[0])); });
  run("mean", {{3, 4}}, [](auto& x) { return mean(mul(x[0], x[0])); });
  run("reshape", {{3, 4}}, [](auto& x) { return reshape(x[0], {2, 6}); });
  run("swap_axes01", {{2, 3, 4}}, [](auto& x) { return swap_axes01(x[0]); });
  run("slice_rows", {{5, 3}}, [](auto& x) { return slice_rows(x[0], 1, 3); });
  run("concat_rows", {{2, 3}, {3, 3}}, [](auto& x) { return concat_rows(std::vector<Tensor>{x[0], x[1]}); });
  run("mean_axis1", {{2, 3, 4}}, [](auto& x) { return mean_axis1(x[0]); });
  run("cumsum_points", {{2, 5, 2}}, [](auto& x) { return cumsum_points(x[0]); });
  run("pairwise_add", {{2, 4}, {3, 4}}, [](auto& x) { return pairwise_add(x[0], x[1]); });
  run("softmax", {{3, 5}}, [](auto& x) { return softmax(x[0]); });
  run("masked_softmax", {{2, 6, 6}}, [&](auto& x) { return masked_softmax(x[0], mask); });
  run("layer_norm", {{3, 6}, {6}, {6}}, [](auto& x) { return layer_norm(x[0], x[1], x[2]); });
  run("linear", {{3, 4}, {4, 5}, {5}}, [](auto& x) { return linear(x[0], x[1], x[2]); });
  const Tensor l1_target = constant({3, 4}, rng);
  run("l1_loss", {{3, 4}}, [&](auto& x) { return l1_loss(add(x[0], Tensor::full({3, 4}, 3.0)), l1_target); });
  run("cross_entropy", {{4, 3}}, [&](auto& x) { return cross_entropy(x[0], classes); });
  run("bce_with_logits", {{5}}, [&](auto& x) { return bce_with_logits(x[0], binary); });
  const Tensor dir_target = constant({6, 2}, rng);
  run("direction_loss", {{6, 2}}, [&](auto& x) { return direction_loss(x[0], dir_target); });
  return out;
}

GradCheckReport decoder_layer_gradient_check(double tolerance, std::uint64_t seed) {
  ModelConfig cfg = toy_gradient_config();
  model::InVDriverModel m(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  ParameterRegistry inputs;
  auto x = inputs.add("x", {cfg.M_I * cfg.M_P, cfg.d_model});
  auto ctx = inputs.add("ctx", {5, cfg.d_model});
  fill(x, rng);
  fill(ctx, rng);
  // Move LayerNorm and bias parameters off their initial values.
  std::vector<Parameter> params(inputs.params());
  for (auto& p : m.registry().params())
    if (p.name.rfind("perception.layer0.", 0) == 0) {
      std::normal_distribution<double> n(0.0, 0.1);
      for (auto& v : p.tensor.mutable_values()) v += n(rng);
      params.push_back(p);
    }
  const Tensor coef = constant({cfg.M_I * cfg.M_P, cfg.d_model}, rng);
  const auto mask = query::build_intra_instance_mask(cfg.M_I, cfg.M_P);
  const Tensor contexts[] = {ctx};
  const auto& layer = m.perception.layers[0];
  return grad_check([&] { return mean(mul(model::decoder_layer(x, contexts, mask, layer, cfg.n_heads), coef)); },
                    params, kGradStep, tolerance);
}

ModelConfig toy_gradient_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.M_I = 3;
  c.M_P = 4;
  c.N_O = 2;
  c.N_I = 2;
  c.N_P = 3;
  c.K_I = 2;
  c.K_P = 3;
  c.bev_patch = 4;
  return c;
}

GradCheckReport full_model_gradient_check(double tolerance, std::uint64_t seed) {
  const ModelConfig cfg = toy_gradient_config();
  model::InVDriverModel m(cfg, seed);
  std::mt19937_64 rng(seed + 7);
  std::uniform_real_distribution<double> u01(0.0, 1.0), pos(-10.0, 10.0);

  scene::BevGrid grid;
  grid.height = grid.width = 8;
  grid.data.resize(8 * 8 * scene::kBevChannelCount);
  for (auto& v : grid.data) v = u01(rng);

  std::vector<model::AgentState> agents(cfg.N_O);
  for (auto& a : agents) a = {pos(rng), pos(rng), u01(rng) * 6.0 - 3.0, pos(rng), pos(rng), 4.5, 1.8};
  const auto in = model::inputs_from_bev(grid, agents, scene::Command::right, cfg);

  // Targets sized for the toy horizons.
  train::SceneTargets gt;
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<scene::Point2> line;
    for (std::size_t k = 0; k < cfg.M_P; ++k) line.push_back({pos(rng), pos(rng)});
    gt.map_points.push_back(line);
    gt.map_classes.push_back(i % cfg.map_classes);
  }
  for (const auto& a : agents) {
    gt.agent_last.push_back({a.x, a.y});
    std::vector<scene::Point2> f;
    for (std::size_t t = 0; t < cfg.N_P; ++t) f.push_back({a.x + pos(rng), a.y + pos(rng)});
    gt.agent_futures.push_back(f);
  }
  for (std::size_t t = 0; t < cfg.K_P; ++t) gt.ego_future.push_back({3.0 * (t + 1) + pos(rng) * 0.1, pos(rng) * 0.2});
  gt.command = scene::Command::right;

  // Perturb so LayerNorm gains, biases and zero-initialized heads are not at special points.
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& p : m.registry().params())
    for (auto& v : p.tensor.mutable_values()) v += n(rng);

  // Matching and winner-mode selection are piecewise constant in the
  // parameters; hold them at the unperturbed point so the check measures the
  // differentiable part rather than assignment flips between near-tied queries.
  const train::LossWeights w;
  const auto out0 = m.forward(in);
  const auto map_match = train::match_map(out0.map_points, out0.map_class_logits, gt);
  const auto pred_match = train::match_prediction(out0, in.agents, gt);
  auto loss = [&] {
    const auto out = m.forward(in);
    const auto a = train::map_loss(out.map_points, out.map_class_logits, gt, map_match, w);
    const auto b = train::prediction_loss(out, pred_match, gt, w);
    const auto c = train::planning_loss(out, gt, w);
    return add(add(a.total, b.total), c.total);
  };
  return grad_check(loss, m.registry().params(), kGradStep, tolerance);
}

}  // namespace invd::checks
