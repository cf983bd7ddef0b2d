#include "invdriver/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "invdriver/errors.hpp"

namespace invd::scene {

std::string_view to_string(MapClass c) { return c == MapClass::boundary ? "boundary" : "divider"; }

MapClass map_class_from_string(std::string_view s) {
  if (s == "boundary") return MapClass::boundary;
  if (s == "divider") return MapClass::divider;
  throw ValidationError("unknown map class '" + std::string(s) + "'");
}

std::string_view to_string(Command c) {
  switch (c) {
    case Command::left: return "left";
    case Command::straight: return "straight";
    case Command::right: return "right";
  }
  return "straight";
}

Command command_from_string(std::string_view s) {
  if (s == "left") return Command::left;
  if (s == "straight") return Command::straight;
  if (s == "right") return Command::right;
  throw ValidationError("unknown command '" + std::string(s) + "'");
}

void SceneGenConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("SceneGenConfig: " + m); };
  if (!(range_forward > 0 && range_backward > 0 && range_lateral > 0)) fail("perception extents must be positive");
  if (!(resolution > 0)) fail("resolution must be positive");
  const double rows = (range_forward + range_backward) / resolution, cols = 2.0 * range_lateral / resolution;
  if (std::abs(rows - std::round(rows)) > 1e-9 || std::abs(cols - std::round(cols)) > 1e-9)
    fail("perception extents must be whole multiples of the resolution");
  if (!(lane_width > 0)) fail("lane_width must be positive");
  if (lane_count_min < 1 || lane_count_max < lane_count_min) fail("lane count range invalid");
  if (agent_count_min < 0 || agent_count_max < agent_count_min) fail("agent count range invalid");
  if (lane_count_max * lane_width >= range_lateral) fail("widest road does not fit the lateral range");
  if (curvature_max < 0 || straight_curvature < 0 || straight_curvature > curvature_max)
    fail("curvature bounds invalid");
  // Keeps every offset line a single arc of radius larger than the perception window.
  const double extent = std::max({range_forward, range_backward, range_lateral}) + lane_count_max * lane_width;
  if (curvature_max * extent >= 1.0) fail("curvature_max allows self-intersecting lanes within range");
  if (!(speed_min > 0 && speed_max >= speed_min && speed_max <= 20.0)) fail("speed range must lie in (0, 20] m/s");
  if (agent_speed_noise < 0 || ego_speed_noise < 0 || position_noise < 0) fail("noise scales must be non-negative");
  if (position_noise > 0.25) fail("position_noise above 0.25 m breaks the speed bound");
  if (!(dt > 0)) fail("dt must be positive");
  if (history_steps < 2 || future_steps < 2) fail("history_steps and future_steps must be >= 2");
  if (!(command_threshold_deg > 0 && command_threshold_deg < 10.0)) fail("command_threshold_deg must lie in (0, 10)");
  if (!(point_spacing > 0)) fail("point_spacing must be positive");
}

bool SceneGenConfig::in_range(Point2 p) const {
  return p.x >= x_min() && p.x <= x_max() && p.y >= y_min() && p.y <= y_max();
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Point at arc length s along the reference line (through the origin, heading +x,
// constant curvature kappa), shifted laterally by `offset` (positive = left).
Point2 road_point(double kappa, double s, double offset) {
  double cx, cy;
  if (std::abs(kappa) < 1e-12) {
    cx = s;
    cy = 0.0;
  } else {
    cx = std::sin(kappa * s) / kappa;
    cy = (1.0 - std::cos(kappa * s)) / kappa;
  }
  return {cx - offset * std::sin(kappa * s), cy + offset * std::cos(kappa * s)};
}

Polyline road_line(double kappa, double offset, MapClass cls, const SceneGenConfig& cfg) {
  const double span = cfg.range_forward + cfg.range_backward + 2.0 * cfg.range_lateral;
  const double step = cfg.point_spacing;
  auto walk = [&](double dir) {
    std::vector<Point2> pts;
    double s_in = 0.0;
    for (double s = dir * step; std::abs(s) <= span; s += dir * step) {
      const Point2 p = road_point(kappa, s, offset);
      if (!cfg.in_range(p)) {
        double lo = s_in, hi = s;
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          (cfg.in_range(road_point(kappa, mid, offset)) ? lo : hi) = mid;
        }
        const Point2 edge = road_point(kappa, lo, offset);
        const Point2 last = pts.empty() ? road_point(kappa, 0.0, offset) : pts.back();
        if (std::hypot(edge.x - last.x, edge.y - last.y) > 1e-3) pts.push_back(edge);
        break;
      }
      pts.push_back(p);
      s_in = s;
    }
    return pts;
  };
  auto back = walk(-1.0);
  auto front = walk(1.0);
  Polyline line;
  line.cls = cls;
  line.points.assign(back.rbegin(), back.rend());
  line.points.push_back(road_point(kappa, 0.0, offset));
  line.points.insert(line.points.end(), front.begin(), front.end());
  return line;
}

}  // namespace

double net_heading_change(const std::vector<Point2>& ego) {
  if (ego.size() < 2) return 0.0;
  const double first = std::atan2(ego[0].y, ego[0].x);
  const auto& a = ego[ego.size() - 2];
  const auto& b = ego.back();
  double d = std::atan2(b.y - a.y, b.x - a.x) - first;
  while (d > std::numbers::pi) d -= 2.0 * std::numbers::pi;
  while (d < -std::numbers::pi) d += 2.0 * std::numbers::pi;
  return d;
}

VectorScene generate_scene(std::uint64_t seed, const SceneGenConfig& cfg) {
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto uniform_int = [&](int lo, int hi) {
    return lo + static_cast<int>(std::min<double>(hi - lo, std::floor(unit(rng) * (hi - lo + 1))));
  };

  VectorScene scene;
  scene.seed = seed;

  const int lanes = uniform_int(cfg.lane_count_min, cfg.lane_count_max);
  const int ego_lane = uniform_int(0, lanes - 1);
  const int road_kind = uniform_int(0, 2);  // 0 left curve, 1 straight, 2 right curve
  double kappa = uniform(-cfg.straight_curvature, cfg.straight_curvature);
  if (road_kind != 1) {
    const double mag = uniform(0.25 * cfg.curvature_max, cfg.curvature_max);
    kappa = road_kind == 0 ? mag : -mag;
  }
  const double flow_speed = uniform(cfg.speed_min, cfg.speed_max);

  const double w = cfg.lane_width;
  for (int k = 0; k <= lanes; ++k) {
    const double offset = (k - ego_lane - 0.5) * w;
    const MapClass cls = (k == 0 || k == lanes) ? MapClass::boundary : MapClass::divider;
    scene.map.push_back(road_line(kappa, offset, cls, cfg));
  }

  const double ego_speed = std::clamp(flow_speed + cfg.ego_speed_noise * gauss(rng), 1.0, 20.0);
  for (int k = 1; k <= cfg.future_steps; ++k)
    scene.ego_future.push_back(road_point(kappa, ego_speed * k * cfg.dt, 0.0));
  const double dh = net_heading_change(scene.ego_future);
  const double threshold = cfg.command_threshold_deg * std::numbers::pi / 180.0;
  scene.command = dh >= threshold ? Command::left : (dh <= -threshold ? Command::right : Command::straight);

  const int wanted = uniform_int(cfg.agent_count_min, cfg.agent_count_max);
  struct Slot {
    int lane;
    double s;
  };
  std::vector<Slot> placed;
  constexpr double kGap = 8.0;
  for (int attempt = 0; attempt < 50 * std::max(wanted, 1) && static_cast<int>(placed.size()) < wanted; ++attempt) {
    const int lane = uniform_int(0, lanes - 1);
    const double s0 = uniform(-cfg.range_backward + 5.0, cfg.range_forward - 10.0);
    const double length = uniform(3.5, 5.0);
    const double width = uniform(1.6, 2.0);
    const double speed = std::clamp(flow_speed + cfg.agent_speed_noise * gauss(rng), 1.0, 20.0);
    const double offset = (lane - ego_lane) * w;
    const Point2 now = road_point(kappa, s0, offset);
    const bool inside = now.x >= cfg.x_min() + 2.0 && now.x <= cfg.x_max() - 2.0 &&
                        now.y >= cfg.y_min() + 2.0 && now.y <= cfg.y_max() - 2.0;
    const bool hits_ego = lane == ego_lane && std::abs(s0) < kGap;
    const bool hits_agent = std::any_of(placed.begin(), placed.end(),
                                        [&](const Slot& o) { return o.lane == lane && std::abs(o.s - s0) < kGap; });
    if (!inside || hits_ego || hits_agent) continue;
    placed.push_back({lane, s0});

    AgentTrack agent;
    agent.length = length;
    agent.width = width;
    auto pose_at = [&](double t) {
      const double s = s0 + speed * t;
      const Point2 p = road_point(kappa, s, offset);
      return Pose{p.x + cfg.position_noise * gauss(rng), p.y + cfg.position_noise * gauss(rng), kappa * s};
    };
    for (int j = cfg.history_steps - 1; j >= 0; --j) agent.history.push_back(pose_at(-j * cfg.dt));
    for (int k = 1; k <= cfg.future_steps; ++k) agent.future.push_back(pose_at(k * cfg.dt));
    scene.agents.push_back(std::move(agent));
  }
  return scene;
}

std::vector<VectorScene> generate_scenes(std::uint64_t first_seed, std::size_t count, const SceneGenConfig& cfg) {
  cfg.validate();
  std::vector<VectorScene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(first_seed + i, cfg));
  return out;
}

namespace {

double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Point2 a, Point2 b, Point2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

}  // namespace

bool segments_intersect(Point2 a0, Point2 a1, Point2 b0, Point2 b1) {
  const double d1 = cross(b0, b1, a0), d2 = cross(b0, b1, a1);
  const double d3 = cross(a0, a1, b0), d4 = cross(a0, a1, b1);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(b0, b1, a0)) return true;
  if (d2 == 0 && on_segment(b0, b1, a1)) return true;
  if (d3 == 0 && on_segment(a0, a1, b0)) return true;
  if (d4 == 0 && on_segment(a0, a1, b1)) return true;
  return false;
}

bool polylines_intersect(const Polyline& a, const Polyline& b) {
  for (std::size_t i = 0; i + 1 < a.points.size(); ++i)
    for (std::size_t j = 0; j + 1 < b.points.size(); ++j)
      if (segments_intersect(a.points[i], a.points[i + 1], b.points[j], b.points[j + 1])) return true;
  return false;
}

std::vector<std::string> validate_scene(const VectorScene& scene, const SceneGenConfig& cfg) {
  std::vector<std::string> errs;
  for (std::size_t i = 0; i < scene.map.size(); ++i) {
    const auto& pts = scene.map[i].points;
    const std::string tag = "map[" + std::to_string(i) + "]";
    if (pts.size() < 2) errs.push_back(tag + " has fewer than 2 points");
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (!cfg.in_range(pts[k])) errs.push_back(tag + " point " + std::to_string(k) + " outside range");
      if (k > 0 && std::hypot(pts[k].x - pts[k - 1].x, pts[k].y - pts[k - 1].y) <= 1e-6)
        errs.push_back(tag + " repeats point " + std::to_string(k));
    }
  }
  for (std::size_t i = 0; i < scene.map.size(); ++i)
    for (std::size_t j = i + 1; j < scene.map.size(); ++j)
      if (polylines_intersect(scene.map[i], scene.map[j]))
        errs.push_back("map[" + std::to_string(i) + "] intersects map[" + std::to_string(j) + "]");

  if (static_cast<int>(scene.agents.size()) > cfg.agent_count_max) errs.push_back("too many agents");
  for (std::size_t a = 0; a < scene.agents.size(); ++a) {
    const auto& ag = scene.agents[a];
    const std::string tag = "agent[" + std::to_string(a) + "]";
    if (static_cast<int>(ag.future.size()) != cfg.future_steps) errs.push_back(tag + " future length mismatch");
    if (ag.history.empty()) errs.push_back(tag + " has no history");
    Pose prev = ag.history.empty() ? ag.future.front() : ag.history.back();
    for (const auto& p : ag.future) {
      if (std::hypot(p.x - prev.x, p.y - prev.y) / cfg.dt > kMaxAgentSpeed) errs.push_back(tag + " exceeds speed bound");
      prev = p;
    }
  }

  const auto& ego = scene.ego_future;
  if (static_cast<int>(ego.size()) != cfg.future_steps) {
    errs.push_back("ego_future length mismatch");
  } else {
    // The stored plan starts at t = dt; its t = 0 extrapolation must sit at the origin.
    const Point2 start{2.0 * ego[0].x - ego[1].x, 2.0 * ego[0].y - ego[1].y};
    if (std::hypot(start.x, start.y) > 0.5) errs.push_back("ego_future does not start at the origin");
    const double dh = net_heading_change(ego);
    const bool ok = (scene.command == Command::left && dh > 0) || (scene.command == Command::right && dh < 0) ||
                    (scene.command == Command::straight && std::abs(dh) < 10.0 * std::numbers::pi / 180.0);
    if (!ok) errs.push_back("command inconsistent with ego heading change");
  }
  return errs;
}

std::vector<Point2> resample_polyline(const std::vector<Point2>& pts, std::size_t count) {
  if (pts.size() < 2 || count < 2) throw InputError("resample_polyline needs >= 2 input and output points");
  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i)
    cum[i] = cum[i - 1] + std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  const double total = cum.back();
  std::vector<Point2> out;
  out.reserve(count);
  std::size_t seg = 0;
  for (std::size_t j = 0; j < count; ++j) {
    if (j + 1 == count) {
      out.push_back(pts.back());
      break;
    }
    const double s = total * static_cast<double>(j) / static_cast<double>(count - 1);
    while (seg + 2 < pts.size() && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0 ? (s - cum[seg]) / len : 0.0;
    out.push_back({pts[seg].x + t * (pts[seg + 1].x - pts[seg].x), pts[seg].y + t * (pts[seg + 1].y - pts[seg].y)});
  }
  return out;
}

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

double point_polyline_distance(Point2 p, const std::vector<Point2>& line) {
  if (line.size() == 1) return std::hypot(p.x - line[0].x, p.y - line[0].y);
  double best = INFINITY;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) best = std::min(best, point_segment_distance(p, line[i], line[i + 1]));
  return best;
}

}  // namespace invd::scene
