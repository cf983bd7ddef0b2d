// End-to-end acceptance suite. One line per criterion:
//   [PASS] C<n> <name>: <measured values>  (<seconds> s)
// Exit status is non-zero when any selected criterion fails.
//
//   invd_acceptance                  all criteria
//   invd_acceptance --only 1,2,5     a subset
//   invd_acceptance --log run.txt    per-epoch training progress for C6/C7

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "invdriver/checks.hpp"
#include "invdriver/dataset.hpp"
#include "invdriver/eval.hpp"
#include "invdriver/model.hpp"
#include "invdriver/ops.hpp"
#include "invdriver/queries.hpp"
#include "invdriver/training.hpp"

namespace fs = std::filesystem;
using namespace invd;
using ad::Tensor;

namespace {

// ---- pinned tolerances and sizes ----
constexpr int kMaskCases = 100;
constexpr std::size_t kMaxQueries = 256;
constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;
constexpr int kOpSeeds = 20;
constexpr int kBypassCases = 20;
constexpr int kMatchingCases = 200;
constexpr std::size_t kMaxMatchSize = 6;
constexpr int kBoxPairs = 100;
constexpr double kBoxBand = 0.01;
constexpr double kSoftmaxTolerance = 1e-12;
constexpr std::size_t kTrainScenes = 512;
constexpr std::size_t kEpochs = 50;
constexpr double kLearningRate = 2e-4;
constexpr double kRequiredLossDrop = 0.5;
constexpr std::uint64_t kEvalSeed = 1'000'000;
constexpr std::size_t kEvalScenes = 128;
constexpr std::uint64_t kPairedSeeds[] = {0, 1, 2};
constexpr double kRequiredDeGain = 0.05;
constexpr int kRequiredPairWins = 2;

std::FILE* g_log = nullptr;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(ad::numel_of(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

model::AttentionBlock random_block(std::mt19937_64& rng, std::size_t d) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  model::AttentionBlock b;
  b.norm = {random_tensor(rng, {d}, 0.3), random_tensor(rng, {d}, 0.3)};
  b.attn.w_q = random_tensor(rng, {d, d}, s);
  b.attn.b_q = random_tensor(rng, {d}, 0.1);
  b.attn.w_k = random_tensor(rng, {d, d}, s);
  b.attn.w_v = random_tensor(rng, {d, d}, s);
  b.attn.b_v = random_tensor(rng, {d}, 0.1);
  b.attn.w_o = random_tensor(rng, {d, d}, s);
  b.attn.b_o = random_tensor(rng, {d}, 0.1);
  return b;
}

model::DecoderLayerParams random_layer(std::mt19937_64& rng, std::size_t d) {
  model::DecoderLayerParams l;
  l.cross.push_back(random_block(rng, d));
  l.self_attn = random_block(rng, d);
  l.ffn_norm = {random_tensor(rng, {d}, 0.3), random_tensor(rng, {d}, 0.3)};
  l.ffn = {random_tensor(rng, {d, 2 * d}, 0.2), random_tensor(rng, {2 * d}, 0.1), random_tensor(rng, {2 * d, d}, 0.2),
           random_tensor(rng, {d}, 0.1)};
  return l;
}

// ---- C1 ----

Outcome mask_blocking() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> count(1, 16);
  const std::size_t dims[] = {8, 16, 32};
  std::size_t violations = 0, blocked_checked = 0, max_q = 0;
  for (int c = 0; c < kMaskCases; ++c) {
    std::size_t n = count(rng), p = count(rng);
    while (n * p > kMaxQueries) p = count(rng);
    const std::size_t q = n * p;
    max_q = std::max(max_q, q);
    const std::size_t d = dims[rng() % 3];
    const std::size_t heads = std::size_t{1} << (rng() % 3);
    const auto mask = query::build_intra_instance_mask(n, p);

    // masked_softmax: exact zeros off the block diagonal.
    const Tensor probs = ad::masked_softmax(random_tensor(rng, {heads, q, q}, 3.0), mask);
    const auto pv = probs.values();
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < q; ++j)
          if (!mask.allowed(i, j)) {
            ++blocked_checked;
            if (pv[(h * q + i) * q + j] != 0.0 || std::signbit(pv[(h * q + i) * q + j])) ++violations;
          }

    // Outputs of instance b do not depend on any other instance.
    const auto block = random_block(rng, d);
    const auto layer = random_layer(rng, d);
    const Tensor ctx = random_tensor(rng, {5, d});
    const Tensor contexts[] = {ctx};
    Tensor x = random_tensor(rng, {q, d});
    const std::size_t b = rng() % n;
    const Tensor a0 = model::intra_instance_self_attention(x, mask, block, heads);
    const Tensor l0 = model::decoder_layer(x, contexts, mask, layer, heads);
    Tensor x2 = x.clone();
    std::normal_distribution<double> noise(0.0, 5.0);
    auto xv = x2.mutable_values();
    for (std::size_t i = 0; i < q; ++i)
      if (i / p != b)
        for (std::size_t k = 0; k < d; ++k) xv[i * d + k] += noise(rng);
    const Tensor a1 = model::intra_instance_self_attention(x2, mask, block, heads);
    const Tensor l1 = model::decoder_layer(x2, contexts, mask, layer, heads);
    const auto rows = [&](const Tensor& t) { return t.values().subspan(b * p * d, p * d); };
    if (!bitwise_equal(rows(a0), rows(a1)) || !bitwise_equal(rows(l0), rows(l1))) ++violations;
  }
  return {violations == 0, fmt("%d cases, q <= %zu, %zu blocked probabilities checked, %zu violations", kMaskCases,
                               max_q, blocked_checked, violations)};
}

// ---- C2 ----

Outcome gradient_fidelity() {
  double worst_op = 0.0;
  std::string worst_name;
  std::size_t failed = 0, ops = 0;
  for (int seed = 0; seed < kOpSeeds; ++seed)
    for (const auto& r : checks::op_gradient_checks(kOpTolerance, seed)) {
      if (seed == 0) ++ops;
      if (!r.report.passed()) ++failed;
      if (r.report.max_rel_error() > worst_op) {
        worst_op = r.report.max_rel_error();
        worst_name = r.name;
      }
    }
  const auto layer = checks::decoder_layer_gradient_check(kOpTolerance, 0);
  const auto full = checks::full_model_gradient_check(kModelTolerance, 0);
  const bool pass = failed == 0 && layer.passed() && full.passed();
  return {pass, fmt("%zu ops x %d seeds max %.2e (%s), decoder layer %.2e (tol %.0e), toy model loss %.2e (tol %.0e)",
                    ops, kOpSeeds, worst_op, worst_name.c_str(), layer.max_rel_error(), kOpTolerance,
                    full.max_rel_error(), kModelTolerance)};
}

// ---- C3 ----

Outcome shape_contract() {
  const ModelConfig cfg;
  const scene::SceneGenConfig sc;
  const model::InVDriverModel m(cfg, 0);
  ad::NoGradGuard ng;
  bool pass = true;
  std::string agent_shapes;
  for (std::uint64_t seed : {3, 4}) {
    const auto s = scene::generate_scene(seed, sc);
    const auto out = m.forward(model::prepare_inputs(s, sc, cfg));
    const std::size_t n = s.agents.size();
    pass = pass && out.map_points.shape() == ad::Shape{100, 20, 2};
    pass = pass && out.map_queries.shape() == ad::Shape{2000, cfg.d_model};
    pass = pass && out.n_agents == n && out.agent_trajectories.shape() == ad::Shape{n, 5, 6, 2};
    pass = pass && out.ego_trajectories.shape() == ad::Shape{3, 6, 2};
    agent_shapes += fmt("%s[%zu, 5, 6, 2]", agent_shapes.empty() ? "" : " ", n);
  }
  return {pass, "map_points [100, 20, 2] from 2000 queries, agents " + agent_shapes + ", ego [3, 6, 2]"};
}

// ---- C4 ----

Outcome bev_bypass() {
  const ModelConfig cfg;
  const scene::SceneGenConfig sc;
  const model::InVDriverModel m(cfg, 5);
  std::mt19937_64 rng(404);
  ad::NoGradGuard ng;
  int unchanged = 0, sensitive = 0;
  for (int c = 0; c < kBypassCases; ++c) {
    const auto s = scene::generate_scene(500 + c, sc);
    const auto in = model::prepare_inputs(s, sc, cfg);
    const auto out = m.forward(in);
    auto swapped = in;
    swapped.bev_patches = random_tensor(rng, in.bev_patches.shape());
    model::ForwardOverrides fixed;
    fixed.map_queries = out.map_queries;
    fixed.motion_queries = out.motion_queries;
    const auto held = m.forward(swapped, fixed);
    if (bitwise_equal(out.ego_trajectories.values(), held.ego_trajectories.values()) &&
        bitwise_equal(out.ego_mode_logits.values(), held.ego_mode_logits.values()))
      ++unchanged;
    // Without the overrides the new BEV must reach planning, or the check above is vacuous.
    const auto free = m.forward(swapped);
    if (!bitwise_equal(out.ego_trajectories.values(), free.ego_trajectories.values())) ++sensitive;
  }
  return {unchanged == kBypassCases && sensitive == kBypassCases,
          fmt("%d/%d cases bitwise unchanged with queries held, %d/%d change when queries are recomputed", unchanged,
              kBypassCases, sensitive, kBypassCases)};
}

// ---- C5 ----

// Summed in row order, the same order the solver reports its total in, so the
// two minima can be compared exactly.
double brute_force_assignment(const std::vector<double>& cost, std::size_t n, std::size_t m) {
  const bool rows_first = n <= m;
  const std::size_t small = std::min(n, m), large = std::max(n, m);
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs(small);
  double best = INFINITY;
  do {
    for (std::size_t i = 0; i < small; ++i) pairs[i] = rows_first ? std::pair{i, perm[i]} : std::pair{perm[i], i};
    std::sort(pairs.begin(), pairs.end());
    double c = 0.0;
    for (const auto& [i, j] : pairs) c += cost[i * m + j];
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

bool inside(scene::Point2 p, const eval::OrientedBox& b) {
  const double dx = p.x - b.center.x, dy = p.y - b.center.y;
  const double u = dx * std::cos(b.heading) + dy * std::sin(b.heading);
  const double v = -dx * std::sin(b.heading) + dy * std::cos(b.heading);
  return std::abs(u) <= b.length / 2 && std::abs(v) <= b.width / 2;
}

// Convex shapes overlap iff some outline point of one lies in the other.
bool sampled_intersect(const eval::OrientedBox& a, const eval::OrientedBox& b) {
  constexpr int kPerEdge = 2500;
  for (const auto& [r, other] : {std::pair{a, b}, std::pair{b, a}}) {
    const auto c = eval::corners(r);
    for (int e = 0; e < 4; ++e)
      for (int k = 0; k <= kPerEdge; ++k) {
        const double t = static_cast<double>(k) / kPerEdge;
        const auto p0 = c[e], p1 = c[(e + 1) % 4];
        if (inside({p0.x + t * (p1.x - p0.x), p0.y + t * (p1.y - p0.y)}, other)) return true;
      }
  }
  return false;
}

Outcome oracle_equivalences() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<std::size_t> size(1, kMaxMatchSize);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  int match_fail = 0;
  for (int c = 0; c < kMatchingCases; ++c) {
    const std::size_t n = size(rng), m = size(rng);
    std::vector<double> cost(n * m);
    for (auto& v : cost) v = u(rng);
    if (train::hungarian(cost, n, m).total_cost != brute_force_assignment(cost, n, m)) ++match_fail;
  }

  std::uniform_real_distribution<double> pos(-4, 4), ang(-M_PI, M_PI), len(1.0, 5.0), wid(0.5, 2.5);
  int pairs = 0, box_fail = 0, hits = 0;
  while (pairs < kBoxPairs) {
    const eval::OrientedBox a{{pos(rng), pos(rng)}, ang(rng), len(rng), wid(rng)};
    const eval::OrientedBox b{{pos(rng), pos(rng)}, ang(rng), len(rng), wid(rng)};
    if (std::abs(eval::separation(a, b)) < kBoxBand) continue;
    ++pairs;
    const bool sat = eval::boxes_intersect(a, b);
    hits += sat;
    if (sat != sampled_intersect(a, b)) ++box_fail;
  }

  double softmax_err = 0.0;
  for (int c = 0; c < 20; ++c) {
    const std::size_t n = size(rng), p = size(rng), q = n * p;
    const auto mask = query::build_intra_instance_mask(n, p);
    const Tensor logits = random_tensor(rng, {2, q, q}, 4.0);
    const Tensor probs = ad::masked_softmax(logits, mask);
    const auto out = probs.values();
    const auto lv = logits.values();
    for (std::size_t r = 0; r < 2 * q; ++r) {
      const std::size_t i = r % q;
      // Softmax over the allowed entries only, computed directly.
      double mx = -INFINITY, z = 0.0;
      for (std::size_t j = 0; j < q; ++j)
        if (mask.allowed(i, j)) mx = std::max(mx, lv[r * q + j]);
      for (std::size_t j = 0; j < q; ++j)
        if (mask.allowed(i, j)) z += std::exp(lv[r * q + j] - mx);
      for (std::size_t j = 0; j < q; ++j) {
        const double want = mask.allowed(i, j) ? std::exp(lv[r * q + j] - mx) / z : 0.0;
        softmax_err = std::max(softmax_err, std::abs(out[r * q + j] - want));
      }
    }
  }
  return {match_fail == 0 && box_fail == 0 && softmax_err <= kSoftmaxTolerance,
          fmt("hungarian %d/%d exact, collision %d/%d agree (%d intersecting), masked_softmax max |err| %.1e",
              kMatchingCases - match_fail, kMatchingCases, kBoxPairs - box_fail, kBoxPairs, hits, softmax_err)};
}

// ---- C6 / C7 ----

ModelConfig convergence_config(bool masked) {
  ModelConfig c;
  c.d_model = 64;
  c.n_heads = 4;
  c.n_layers = 2;
  c.M_I = 10;
  c.M_P = 10;
  c.N_O = 6;
  c.masked_self_attention = masked;
  return c;
}

struct Arm {
  std::vector<train::EpochRecord> history;
  eval::MetricsReport report;
};

class Runs {
 public:
  Runs() : train_(scene::generate_scenes(0, kTrainScenes, sc_)), eval_(scene::generate_scenes(kEvalSeed, kEvalScenes, sc_)) {}

  const Arm& arm(bool masked, std::uint64_t seed) {
    const auto key = std::pair{masked, seed};
    if (auto it = arms_.find(key); it != arms_.end()) return it->second;
    train::TrainConfig tc;
    tc.epochs = kEpochs;
    tc.lr = kLearningRate;
    tc.seed = seed;
    train::TrainState st(convergence_config(masked), tc, sc_);
    train::TrainOptions opts;
    const auto t0 = std::chrono::steady_clock::now();
    opts.on_epoch = [&](const train::EpochRecord& r) {
      if (!g_log) return;
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(g_log, "masked=%d seed=%llu epoch %zu total %.4f (%.0f s)\n", masked,
                   static_cast<unsigned long long>(seed), r.epoch, r.total, s);
      std::fflush(g_log);
    };
    train::train(st, train_, opts);
    Arm a{st.history, eval::evaluate_model(st.model, eval_, sc_)};
    return arms_.emplace(key, std::move(a)).first->second;
  }

  const std::vector<scene::VectorScene>& eval_scenes() const { return eval_; }
  const scene::SceneGenConfig& scene_config() const { return sc_; }

 private:
  scene::SceneGenConfig sc_;
  std::vector<scene::VectorScene> train_, eval_;
  std::map<std::pair<bool, std::uint64_t>, Arm> arms_;
};

Runs& runs() {
  static Runs r;
  return r;
}

Outcome convergence() {
  const auto& a = runs().arm(true, 0);
  const double first = a.history.front().total, last = a.history.back().total;
  const double drop = 1.0 - last / first;
  const auto cfg = convergence_config(true);
  const auto gt = eval::evaluate_predictor(runs().eval_scenes(), cfg, [&](const scene::VectorScene& s) {
    return eval::ground_truth_output(s, cfg);
  });
  const bool gt_zero = gt.de.at[0] == 0.0 && gt.de.at[1] == 0.0 && gt.de.at[2] == 0.0 && gt.de.avg == 0.0;
  return {a.history.size() == kEpochs && drop >= kRequiredLossDrop && gt_zero,
          fmt("loss %.3f -> %.3f over %zu epochs (drop %.1f%%, need %.0f%%), GT pass-through DE %g, trained avg DE "
              "%.3f m",
              first, last, a.history.size(), 100 * drop, 100 * kRequiredLossDrop, gt.de.avg, a.report.de.avg)};
}

Outcome ablation_direction() {
  int wins = 0;
  std::string pairs;
  for (auto seed : kPairedSeeds) {
    const double with = runs().arm(true, seed).report.de.avg;
    const double without = runs().arm(false, seed).report.de.avg;
    const double gain = 1.0 - with / without;
    if (gain >= kRequiredDeGain) ++wins;
    pairs += fmt("%sseed %llu: %.3f vs %.3f (%+.1f%%)", pairs.empty() ? "" : ", ",
                 static_cast<unsigned long long>(seed), with, without, 100 * gain);
  }
  return {wins >= kRequiredPairWins,
          fmt("masked vs unmasked avg DE, %s; %d/3 pairs >= %.0f%% lower", pairs.c_str(), wins, 100 * kRequiredDeGain)};
}

// ---- C8 ----

Outcome determinism(const fs::path& dir) {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.n_layers = 1;
  mc.M_I = 4;
  mc.M_P = 5;
  mc.N_O = 6;
  train::TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.seed = 11;
  const scene::SceneGenConfig sc;
  std::vector<std::string> failures;

  // Dataset: identical generation, lossless read-back, byte-stable rewrite.
  const auto d1 = dir / "a.jsonl", d2 = dir / "b.jsonl", d3 = dir / "c.jsonl";
  scene::write_dataset(scene::generate_scenes(77, 12, sc), sc, d1);
  scene::write_dataset(scene::generate_scenes(77, 12, sc), sc, d2);
  const auto data = scene::read_dataset(d1);
  scene::write_dataset(data.scenes, data.config, d3);
  if (read_bytes(d1) != read_bytes(d2)) failures.push_back("dataset generation");
  if (data.scenes != scene::generate_scenes(77, 12, sc) || !(data.config == sc) || read_bytes(d1) != read_bytes(d3))
    failures.push_back("dataset round trip");

  // Two full train + eval runs.
  std::string reports[2];
  for (int k = 0; k < 2; ++k) {
    train::TrainState st(mc, tc, sc);
    train::TrainOptions o;
    o.checkpoint_path = dir / ("run" + std::to_string(k) + ".ckpt");
    train::train(st, data.scenes, o);
    const auto r = eval::evaluate(*o.checkpoint_path, d1);
    reports[k] = eval::report_json(r.report);
  }
  if (read_bytes(dir / "run0.ckpt") != read_bytes(dir / "run1.ckpt")) failures.push_back("checkpoints differ");
  if (reports[0] != reports[1]) failures.push_back("reports differ");

  // Checkpoint round trip: same bytes on re-save, same forward outputs.
  auto loaded = train::load_checkpoint(dir / "run0.ckpt");
  train::save_checkpoint(loaded, dir / "resaved.ckpt");
  if (read_bytes(dir / "run0.ckpt") != read_bytes(dir / "resaved.ckpt")) failures.push_back("checkpoint round trip");

  // Resume from the end of epoch 1.
  {
    train::TrainState st(mc, tc, sc);
    train::TrainOptions o;
    o.stop_after = 1;
    train::train(st, data.scenes, o);
    train::save_checkpoint(st, dir / "half.ckpt");
  }
  auto resumed = train::load_checkpoint(dir / "half.ckpt");
  train::train(resumed, data.scenes);
  train::save_checkpoint(resumed, dir / "resumed.ckpt");
  if (read_bytes(dir / "run0.ckpt") != read_bytes(dir / "resumed.ckpt")) failures.push_back("resume");

  std::string detail = "datasets, checkpoints, reports, checkpoint round trip and resume";
  if (failures.empty()) return {true, detail + " bitwise identical"};
  std::string what;
  for (const auto& f : failures) what += (what.empty() ? "" : ", ") + f;
  return {false, "mismatch: " + what};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"invdriver acceptance suite"};
  std::vector<int> only;
  std::string log_path;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 8));
  app.add_option("--log", log_path, "Training progress log for criteria 6 and 7");
  CLI11_PARSE(app, argc, argv);
  if (!log_path.empty()) g_log = std::fopen(log_path.c_str(), "w");

  const fs::path work = fs::temp_directory_path() / ("invd_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"mask-blocking exactness", mask_blocking},
      {"gradient fidelity", gradient_fidelity},
      {"shape contract", shape_contract},
      {"BEV bypass", bev_bypass},
      {"oracle equivalences", oracle_equivalences},
      {"convergence smoke test", convergence},
      {"masked self-attention ablation direction", ablation_direction},
      {"determinism and persistence", [&] { return determinism(work); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] C%d %s: %s  (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), s);
    std::fflush(stdout);
    failed += !o.pass;
  }
  fs::remove_all(work);
  if (g_log) std::fclose(g_log);
  return failed == 0 ? 0 : 1;
}
