#include "invdriver/eval.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "invdriver/dataset.hpp"
#include "invdriver/errors.hpp"
#include "invdriver/json_io.hpp"
#include "json.hpp"

namespace invd::eval {

namespace {

using ad::Tensor;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

HorizonMetrics finish(std::array<double, 3> v) {
  HorizonMetrics h;
  h.at = v;
  h.avg = (v[0] + v[1] + v[2]) / 3.0;
  return h;
}

std::span<const double> ego_mode(const model::ModelOutput& out, std::size_t mode) {
  const std::size_t kp = out.ego_trajectories.dim(1);
  return out.ego_trajectories.values().subspan(mode * kp * 2, kp * 2);
}

}  // namespace

HorizonMetrics displacement_error(std::span<const double> pred, const std::vector<Point2>& gt) {
  if (pred.size() != gt.size() * 2)
    throw DimensionError("displacement_error: " + std::to_string(pred.size() / 2) + " predicted points vs " +
                         std::to_string(gt.size()) + " ground truth");
  if (gt.size() <= kHorizonIndex.back())
    throw DimensionError("displacement_error needs at least " + std::to_string(kHorizonIndex.back() + 1) + " points");
  std::array<double, 3> v{};
  for (std::size_t h = 0; h < 3; ++h) {
    const std::size_t i = kHorizonIndex[h];
    v[h] = std::hypot(pred[2 * i] - gt[i].x, pred[2 * i + 1] - gt[i].y);
  }
  return finish(v);
}

// ---- collision ----

std::array<Point2, 4> corners(const OrientedBox& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hl = b.length / 2, hw = b.width / 2;
  std::array<Point2, 4> out;
  const double su[4] = {hl, -hl, -hl, hl}, sv[4] = {hw, hw, -hw, -hw};
  for (int k = 0; k < 4; ++k) out[k] = {b.center.x + su[k] * c - sv[k] * s, b.center.y + su[k] * s + sv[k] * c};
  return out;
}

double separation(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = corners(a), cb = corners(b);
  double best = -std::numeric_limits<double>::infinity();
  for (double h : {a.heading, a.heading + M_PI / 2, b.heading, b.heading + M_PI / 2}) {
    const double ax = std::cos(h), ay = std::sin(h);
    double amin = INFINITY, amax = -INFINITY, bmin = INFINITY, bmax = -INFINITY;
    for (int k = 0; k < 4; ++k) {
      const double pa = ca[k].x * ax + ca[k].y * ay, pb = cb[k].x * ax + cb[k].y * ay;
      amin = std::min(amin, pa);
      amax = std::max(amax, pa);
      bmin = std::min(bmin, pb);
      bmax = std::max(bmax, pb);
    }
    best = std::max(best, std::max(bmin - amax, amin - bmax));
  }
  return best;
}

bool boxes_intersect(const OrientedBox& a, const OrientedBox& b) { return separation(a, b) <= 0.0; }

std::vector<double> trajectory_headings(std::span<const double> pts) {
  const std::size_t n = pts.size() / 2;
  auto at = [&](std::ptrdiff_t i) -> Point2 {
    if (i < 0) return {0.0, 0.0};
    return {pts[2 * i], pts[2 * i + 1]};
  };
  std::vector<double> h(n, 0.0);
  double prev = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto i = static_cast<std::ptrdiff_t>(t);
    const Point2 a = at(i - 1), b = t + 1 < n ? at(i + 1) : at(i);
    const double dx = b.x - a.x, dy = b.y - a.y;
    h[t] = std::hypot(dx, dy) > 1e-9 ? std::atan2(dy, dx) : prev;
    prev = h[t];
  }
  return h;
}

std::array<bool, 3> collides(std::span<const double> ego, const std::vector<scene::AgentTrack>& agents,
                             double ego_length, double ego_width) {
  const std::size_t n = ego.size() / 2;
  const auto heading = trajectory_headings(ego);
  std::vector<bool> hit(n, false);
  for (std::size_t t = 0; t < n; ++t) {
    const OrientedBox e{{ego[2 * t], ego[2 * t + 1]}, heading[t], ego_length, ego_width};
    for (const auto& a : agents) {
      if (t >= a.future.size()) continue;
      const auto& p = a.future[t];
      if (boxes_intersect(e, {{p.x, p.y}, p.heading, a.length, a.width})) {
        hit[t] = true;
        break;
      }
    }
  }
  std::array<bool, 3> out{};
  bool any = false;
  std::size_t t = 0;
  for (std::size_t h = 0; h < 3; ++h) {
    for (; t <= kHorizonIndex[h] && t < n; ++t) any = any || hit[t];
    out[h] = any;
  }
  return out;
}

// ---- map quality ----

double chamfer_distance(const std::vector<Point2>& a, const std::vector<Point2>& b) {
  if (a.empty() || b.empty()) throw InputError("chamfer_distance of an empty polyline");
  double ab = 0.0, ba = 0.0;
  for (auto p : a) ab += scene::point_polyline_distance(p, b);
  for (auto p : b) ba += scene::point_polyline_distance(p, a);
  return 0.5 * (ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size()));
}

std::vector<MapPrediction> surviving_map_predictions(const model::ModelOutput& out) {
  const std::size_t M = out.map_points.dim(0), P = out.map_points.dim(1), C1 = out.map_class_logits.dim(1);
  const auto L = out.map_class_logits.values();
  const auto X = out.map_points.values();
  std::vector<MapPrediction> preds;
  for (std::size_t i = 0; i < M; ++i) {
    const auto row = L.subspan(i * C1, C1);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double l : row) z += std::exp(l - mx);
    std::size_t best = 0;
    for (std::size_t c = 1; c + 1 < C1; ++c)
      if (row[c] > row[best]) best = c;
    const double p = std::exp(row[best] - mx) / z;
    if (p < kClassThreshold) continue;
    MapPrediction mp;
    mp.cls = best;
    mp.score = p;
    for (std::size_t k = 0; k < P; ++k) mp.points.push_back({X[(i * P + k) * 2], X[(i * P + k) * 2 + 1]});
    preds.push_back(std::move(mp));
  }
  return preds;
}

bool MapMetrics::operator==(const MapMetrics& o) const {
  auto same = [](double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); };
  return same(chamfer, o.chamfer) && matched == o.matched && same(ap[0], o.ap[0]) && same(ap[1], o.ap[1]) &&
         same(ap[2], o.ap[2]) && same(mean_ap, o.mean_ap);
}

MapMetrics map_metrics(const std::vector<MapSceneInput>& scenes) {
  // Chamfer distances per scene, [pred][gt].
  std::vector<std::vector<double>> dist(scenes.size());
  std::size_t n_classes = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& sc = scenes[s];
    for (const auto& p : sc.predictions) n_classes = std::max(n_classes, p.cls + 1);
    for (const auto& g : sc.ground_truth) n_classes = std::max(n_classes, static_cast<std::size_t>(g.cls) + 1);
    for (const auto& p : sc.predictions)
      for (const auto& g : sc.ground_truth) dist[s].push_back(chamfer_distance(p.points, g.points));
  }

  MapMetrics m;
  // Chamfer over a class-consistent minimum-cost matching.
  constexpr double kMismatch = 1e6;
  double sum = 0.0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& sc = scenes[s];
    const std::size_t n = sc.predictions.size(), g = sc.ground_truth.size();
    if (!n || !g) continue;
    std::vector<double> cost = dist[s];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < g; ++j)
        if (sc.predictions[i].cls != static_cast<std::size_t>(sc.ground_truth[j].cls)) cost[i * g + j] += kMismatch;
    for (auto [i, j] : train::hungarian(cost, n, g).assignment) {
      if (cost[i * g + j] >= kMismatch) continue;
      sum += dist[s][i * g + j];
      ++m.matched;
    }
  }
  m.chamfer = m.matched ? sum / static_cast<double>(m.matched) : kNaN;

  struct Ranked {
    double score;
    std::size_t scene, pred;
  };
  for (std::size_t ti = 0; ti < kApThresholds.size(); ++ti) {
    double ap_sum = 0.0;
    std::size_t classes = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      std::size_t n_gt = 0;
      std::vector<Ranked> ranked;
      for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (const auto& g : scenes[s].ground_truth) n_gt += static_cast<std::size_t>(g.cls) == c;
        for (std::size_t i = 0; i < scenes[s].predictions.size(); ++i)
          if (scenes[s].predictions[i].cls == c) ranked.push_back({scenes[s].predictions[i].score, s, i});
      }
      if (n_gt == 0) continue;
      ++classes;
      std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
      std::vector<std::vector<bool>> taken(scenes.size());
      for (std::size_t s = 0; s < scenes.size(); ++s) taken[s].assign(scenes[s].ground_truth.size(), false);
      std::vector<double> precision, recall;
      std::size_t tp = 0;
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto& sc = scenes[ranked[r].scene];
        const std::size_t g = sc.ground_truth.size();
        std::size_t best = g;
        double best_d = INFINITY;
        for (std::size_t j = 0; j < g; ++j) {
          if (taken[ranked[r].scene][j] || static_cast<std::size_t>(sc.ground_truth[j].cls) != c) continue;
          const double d = dist[ranked[r].scene][ranked[r].pred * g + j];
          if (d < best_d) {
            best_d = d;
            best = j;
          }
        }
        if (best < g && best_d <= kApThresholds[ti]) {
          taken[ranked[r].scene][best] = true;
          ++tp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
      }
      // All-point interpolation: area under the monotone precision envelope.
      for (std::size_t r = precision.size(); r-- > 1;) precision[r - 1] = std::max(precision[r - 1], precision[r]);
      double ap = 0.0, prev_recall = 0.0;
      for (std::size_t r = 0; r < precision.size(); ++r) {
        ap += (recall[r] - prev_recall) * precision[r];
        prev_recall = recall[r];
      }
      ap_sum += ap;
    }
    m.ap[ti] = classes ? ap_sum / static_cast<double>(classes) : kNaN;
  }
  m.mean_ap = (m.ap[0] + m.ap[1] + m.ap[2]) / 3.0;
  return m;
}

// ---- evaluation ----

MetricsReport evaluate_predictor(const std::vector<scene::VectorScene>& scenes, const ModelConfig& cfg,
                                 const Predictor& predict) {
  if (scenes.empty()) throw ValidationError("evaluation needs at least one scene");
  std::array<double, 3> de{}, cr{};
  double detected = 0.0;
  std::vector<MapSceneInput> map_inputs;
  map_inputs.reserve(scenes.size());
  for (const auto& s : scenes) {
    const auto out = predict(s);
    const auto ego = ego_mode(out, model::commanded_mode(s.command, cfg.K_I));
    const auto d = displacement_error(ego, s.ego_future);
    const auto c = collides(ego, s.agents);
    for (std::size_t h = 0; h < 3; ++h) {
      de[h] += d.at[h];
      cr[h] += c[h] ? 1.0 : 0.0;
    }
    for (double l : out.agent_existence_logits.values()) detected += l >= 0.0;  // sigmoid(l) >= 0.5
    map_inputs.push_back({surviving_map_predictions(out), s.map});
  }
  const double n = static_cast<double>(scenes.size());
  for (std::size_t h = 0; h < 3; ++h) {
    de[h] /= n;
    cr[h] /= n;
  }
  MetricsReport r;
  r.de = finish(de);
  r.cr = finish(cr);
  r.map = map_metrics(map_inputs);
  r.mean_detected_agents = detected / n;
  r.scene_count = scenes.size();
  return r;
}

MetricsReport evaluate_model(const model::InVDriverModel& m, const std::vector<scene::VectorScene>& scenes,
                             const scene::SceneGenConfig& scene_cfg) {
  ad::NoGradGuard no_grad;
  return evaluate_predictor(scenes, m.config(), [&](const scene::VectorScene& s) {
    return m.forward(model::prepare_inputs(s, scene_cfg, m.config()));
  });
}

EvalResult evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset) {
  const auto state = train::load_checkpoint(checkpoint);
  const auto data = scene::read_dataset(dataset);
  train::check_compatible(state.model_config, data.config);

  const auto t0 = std::chrono::steady_clock::now();
  EvalResult r;
  r.report = evaluate_model(state.model, data.scenes, data.config);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  auto& m = r.manifest;
  m.model_config_json = nlohmann::json(state.model_config).dump();
  m.train_config_json = nlohmann::json(state.train_config).dump();
  m.scene_config_json = nlohmann::json(data.config).dump();
  m.dataset_path = dataset.string();
  m.dataset_sha256 = scene::file_sha256(dataset);
  m.checkpoint_path = checkpoint.string();
  m.checkpoint_sha256 = scene::file_sha256(checkpoint);
  m.seed = state.train_config.seed;
  m.code_version = INVD_VERSION;
  m.duration_s = secs;
  m.scenes_per_second = secs > 0 ? static_cast<double>(data.scenes.size()) / secs : 0.0;
  return r;
}

model::ModelOutput ground_truth_output(const scene::VectorScene& s, const ModelConfig& cfg) {
  const auto gt = train::make_targets(s, cfg);
  constexpr double kConfident = 30.0;
  const std::size_t C1 = cfg.map_classes + 1;
  model::ModelOutput o;

  std::vector<double> pts(cfg.M_I * cfg.M_P * 2, 0.0), cls(cfg.M_I * C1, 0.0);
  for (std::size_t i = 0; i < cfg.M_I; ++i) {
    if (i < gt.map_points.size()) {
      for (std::size_t k = 0; k < cfg.M_P; ++k) {
        pts[(i * cfg.M_P + k) * 2] = gt.map_points[i][k].x;
        pts[(i * cfg.M_P + k) * 2 + 1] = gt.map_points[i][k].y;
      }
      cls[i * C1 + gt.map_classes[i]] = kConfident;
    } else {
      cls[i * C1 + cfg.map_classes] = kConfident;
    }
  }
  o.map_points = Tensor::from({cfg.M_I, cfg.M_P, 2}, std::move(pts));
  o.map_class_logits = Tensor::from({cfg.M_I, C1}, std::move(cls));

  const std::size_t n = gt.agent_futures.size();
  o.n_agents = n;
  if (n) {
    std::vector<double> traj;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t mode = 0; mode < cfg.N_I; ++mode)
        for (auto p : gt.agent_futures[a]) {
          traj.push_back(p.x);
          traj.push_back(p.y);
        }
    o.agent_trajectories = Tensor::from({n, cfg.N_I, cfg.N_P, 2}, std::move(traj));
    o.agent_mode_logits = Tensor::zeros({n, cfg.N_I});
  }
  std::vector<double> exist(cfg.N_O, -kConfident);
  for (std::size_t a = 0; a < std::min(n, cfg.N_O); ++a) exist[a] = kConfident;
  o.agent_existence_logits = Tensor::from({cfg.N_O}, std::move(exist));

  std::vector<double> ego;
  for (std::size_t mode = 0; mode < cfg.K_I; ++mode)
    for (auto p : gt.ego_future) {
      ego.push_back(p.x);
      ego.push_back(p.y);
    }
  o.ego_trajectories = Tensor::from({cfg.K_I, cfg.K_P, 2}, std::move(ego));
  o.ego_mode_logits = Tensor::zeros({cfg.K_I});
  return o;
}

HorizonMetrics intrinsic_collision_rate(const std::vector<scene::VectorScene>& scenes) {
  if (scenes.empty()) throw ValidationError("collision rate needs at least one scene");
  std::array<double, 3> cr{};
  for (const auto& s : scenes) {
    std::vector<double> ego;
    for (auto p : s.ego_future) {
      ego.push_back(p.x);
      ego.push_back(p.y);
    }
    const auto c = collides(ego, s.agents);
    for (std::size_t h = 0; h < 3; ++h) cr[h] += c[h] ? 1.0 : 0.0;
  }
  for (auto& v : cr) v /= static_cast<double>(scenes.size());
  return finish(cr);
}

// ---- ablation ----

std::vector<AblationSpec> standard_ablation_matrix() {
  return {
      {false, false, false, false}, {true, true, false, true}, {false, true, true, true},
      {true, false, true, true},    {true, true, true, false}, {true, true, true, true},
  };
}

ModelConfig apply(const AblationSpec& spec, ModelConfig cfg) {
  cfg.perception_intra = spec.perception_intra;
  cfg.prediction_intra = spec.prediction_intra;
  cfg.planning_intra = spec.planning_intra;
  cfg.masked_self_attention = spec.masked_self_attention;
  return cfg;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationSpec>& specs, const ModelConfig& base,
                                      const train::TrainConfig& tc, const scene::SceneGenConfig& scene_cfg,
                                      const std::vector<scene::VectorScene>& train_scenes,
                                      const std::vector<scene::VectorScene>& eval_scenes,
                                      const AblationOptions& opts) {
  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    AblationRow row{specs[k], std::nullopt, {}};
    try {
      train::TrainState st(apply(specs[k], base), tc, scene_cfg);
      train::train(st, train_scenes);
      if (opts.checkpoint_dir) {
        std::filesystem::create_directories(*opts.checkpoint_dir);
        train::save_checkpoint(st, *opts.checkpoint_dir / ("row" + std::to_string(k + 1) + ".ckpt"));
      }
      row.report = evaluate_model(st.model, eval_scenes, scene_cfg);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (opts.on_row) opts.on_row(k, row);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- reports ----

namespace {

std::string fixed2(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }

std::string horizon_cells(const HorizonMetrics& h, double scale) {
  std::string out;
  for (double v : h.at) out += pad(fixed2(v * scale), 7);
  return out + pad(fixed2(h.avg * scale), 7);
}

nlohmann::json horizon_json(const HorizonMetrics& h) {
  return {{"1s", h.at[0]}, {"2s", h.at[1]}, {"3s", h.at[2]}, {"avg", h.avg}};
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["scene_count"] = r.scene_count;
  j["de_m"] = horizon_json(r.de);
  j["cr_fraction"] = horizon_json(r.cr);
  j["map_chamfer_m"] = r.map.chamfer;
  j["map_matched"] = r.map.matched;
  j["map_ap"] = {{"0.5", r.map.ap[0]}, {"1.0", r.map.ap[1]}, {"1.5", r.map.ap[2]}, {"mean", r.map.mean_ap}};
  j["mean_detected_agents"] = r.mean_detected_agents;
  return j;
}

const char* kReportHeader =
    "# DE: L2 distance of the commanded ego mode at 1/2/3 s.\n"
    "# CR: ego 4.0 x 1.8 m box against ground-truth agent boxes; a scene counts\n"
    "#     as collided at horizon h if any overlap occurs at or before h.\n";

std::string mark(bool b) { return b ? "  x    " : "       "; }

}  // namespace

std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  os << kReportHeader;
  os << "scenes: " << r.scene_count << "\n\n";
  os << "             1s     2s     3s   Avg.\n";
  os << "L2 (m)    " << horizon_cells(r.de, 1.0) << "\n";
  os << "Coll. (%) " << horizon_cells(r.cr, 100.0) << "\n\n";
  os << "map chamfer (m): " << fixed2(r.map.chamfer) << " over " << r.map.matched << " matched polylines\n";
  os << "map AP @0.5/1.0/1.5 m: " << fixed2(r.map.ap[0]) << " " << fixed2(r.map.ap[1]) << " " << fixed2(r.map.ap[2])
     << "  mean " << fixed2(r.map.mean_ap) << "\n";
  os << "detected agents per scene: " << fixed2(r.mean_detected_agents) << "\n";
  return os.str();
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << kReportHeader;
  os << "                              L2 (m)                       Coll. (%)\n";
  os << "Perc.  Pred.  Plan.  Mask   |     1s     2s     3s   Avg. |     1s     2s     3s   Avg.\n";
  for (const auto& r : rows) {
    os << mark(r.spec.perception_intra) << mark(r.spec.prediction_intra) << mark(r.spec.planning_intra)
       << mark(r.spec.masked_self_attention) << "|";
    if (r.report)
      os << horizon_cells(r.report->de, 1.0) << " |" << horizon_cells(r.report->cr, 100.0);
    else
      os << "  failed: " << r.error;
    os << "\n";
  }
  return os.str();
}

std::string report_json(const MetricsReport& r) { return report_to_json(r).dump(2); }

std::string manifest_json(const RunManifest& m) {
  nlohmann::json j;
  j["model_config"] = nlohmann::json::parse(m.model_config_json);
  j["train_config"] = nlohmann::json::parse(m.train_config_json);
  j["scene_config"] = nlohmann::json::parse(m.scene_config_json);
  j["dataset"] = {{"path", m.dataset_path}, {"sha256", m.dataset_sha256}};
  j["checkpoint"] = {{"path", m.checkpoint_path}, {"sha256", m.checkpoint_sha256}};
  j["seed"] = m.seed;
  j["code_version"] = m.code_version;
  j["duration_s"] = m.duration_s;
  j["scenes_per_second"] = m.scenes_per_second;
  j["scenes_per_second_note"] = "single-process CPU throughput; not comparable to GPU frame rates";
  return j.dump(2);
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["perception_intra"] = r.spec.perception_intra;
    j["prediction_intra"] = r.spec.prediction_intra;
    j["planning_intra"] = r.spec.planning_intra;
    j["masked_self_attention"] = r.spec.masked_self_attention;
    if (r.report)
      j["report"] = report_to_json(*r.report);
    else
      j["error"] = r.error;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

}  // namespace invd::eval
