#include "invdriver/bev.hpp"

#include <algorithm>
#include <cmath>

namespace invd::scene {

BevGrid BevGrid::empty(const SceneGenConfig& cfg) {
  BevGrid g;
  g.resolution = cfg.resolution;
  g.height = static_cast<std::size_t>(std::lround((cfg.range_forward + cfg.range_backward) / cfg.resolution));
  g.width = static_cast<std::size_t>(std::lround(2.0 * cfg.range_lateral / cfg.resolution));
  g.x_min = cfg.x_min();
  g.y_min = cfg.y_min();
  g.data.assign(g.height * g.width * kBevChannelCount, 0.0);
  return g;
}

bool BevGrid::cell_of(Point2 p, std::size_t& r, std::size_t& c) const {
  const double fr = std::floor((p.x - x_min) / resolution), fc = std::floor((p.y - y_min) / resolution);
  if (fr < 0 || fc < 0) return false;
  r = static_cast<std::size_t>(fr);
  c = static_cast<std::size_t>(fc);
  // Points on the far edge belong to the last cell.
  if (r == height && std::abs(p.x - (x_min + height * resolution)) < 1e-9) --r;
  if (c == width && std::abs(p.y - (y_min + width * resolution)) < 1e-9) --c;
  return r < height && c < width;
}

namespace {

// Index range of cells whose centers may lie within `pad` of [lo, hi] along one axis.
std::pair<std::size_t, std::size_t> cell_span(double lo, double hi, double pad, double origin, double res,
                                              std::size_t n) {
  const double a = std::floor((lo - pad - origin) / res), b = std::ceil((hi + pad - origin) / res);
  const auto first = static_cast<std::size_t>(std::clamp(a, 0.0, static_cast<double>(n)));
  const auto last = static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(n)));
  return {first, last};
}

void paint_polyline(BevGrid& g, const Polyline& line) {
  const std::size_t ch = static_cast<std::size_t>(line.cls);
  for (std::size_t i = 0; i + 1 < line.points.size(); ++i) {
    const Point2 a = line.points[i], b = line.points[i + 1];
    const auto [r0, r1] = cell_span(std::min(a.x, b.x), std::max(a.x, b.x), g.resolution, g.x_min, g.resolution, g.height);
    const auto [c0, c1] = cell_span(std::min(a.y, b.y), std::max(a.y, b.y), g.resolution, g.y_min, g.resolution, g.width);
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) {
        const double v = 1.0 - point_segment_distance(g.cell_center(r, c), a, b) / g.resolution;
        if (v > 0.0) g.at(r, c, ch) = std::max(g.at(r, c, ch), v);
      }
  }
}

void paint_agent(BevGrid& g, const AgentTrack& agent, double dt) {
  const Pose now = agent.history.back();
  double vx = 0.0, vy = 0.0;
  if (agent.history.size() >= 2) {
    const Pose prev = agent.history[agent.history.size() - 2];
    vx = (now.x - prev.x) / dt;
    vy = (now.y - prev.y) / dt;
  }
  const double ch = std::cos(now.heading), sh = std::sin(now.heading);
  const double hl = 0.5 * agent.length, hw = 0.5 * agent.width;
  const double ext = std::hypot(hl, hw);
  const auto [r0, r1] = cell_span(now.x, now.x, ext, g.x_min, g.resolution, g.height);
  const auto [c0, c1] = cell_span(now.y, now.y, ext, g.y_min, g.resolution, g.width);
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) {
      const Point2 p = g.cell_center(r, c);
      const double dx = p.x - now.x, dy = p.y - now.y;
      const double u = dx * ch + dy * sh, v = -dx * sh + dy * ch;
      if (std::abs(u) <= hl && std::abs(v) <= hw) {
        g.at(r, c, kAgentChannel) = 1.0;
        g.at(r, c, kVelocityXChannel) = vx;
        g.at(r, c, kVelocityYChannel) = vy;
      }
    }
}

}  // namespace

BevGrid rasterize_bev(const VectorScene& scene, const SceneGenConfig& cfg) {
  BevGrid g = BevGrid::empty(cfg);
  for (const auto& line : scene.map) paint_polyline(g, line);
  for (const auto& agent : scene.agents)
    if (!agent.history.empty()) paint_agent(g, agent, cfg.dt);
  return g;
}

}  // namespace invd::scene
