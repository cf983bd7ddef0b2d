#include "invdriver/plot.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "invdriver/errors.hpp"
#include "invdriver/eval.hpp"

namespace invd::plot {

namespace {

// Shortest round-trip decimal, so rendered vertices invert exactly.
std::string num(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string points_attr(const std::vector<Point2>& pts, const Viewport& vp) {
  std::string s;
  for (auto p : pts) {
    const auto q = vp.to_svg(p);
    if (!s.empty()) s += ' ';
    s += num(q.x) + "," + num(q.y);
  }
  return s;
}

void polyline(std::ostream& os, const std::vector<Point2>& pts, const Viewport& vp, const std::string& attrs) {
  os << "  <polyline " << attrs << " fill=\"none\" points=\"" << points_attr(pts, vp) << "\"/>\n";
}

std::vector<Point2> slice(std::span<const double> v) {
  std::vector<Point2> out;
  for (std::size_t k = 0; k + 1 < v.size(); k += 2) out.push_back({v[k], v[k + 1]});
  return out;
}

const char* kMapColor[] = {"#444444", "#2a7ab0"};  // boundary, divider

}  // namespace

Viewport Viewport::for_scene(const scene::SceneGenConfig& cfg) {
  Viewport vp;
  vp.x_min = cfg.x_min();
  vp.x_max = cfg.x_max();
  vp.y_min = cfg.y_min();
  vp.y_max = cfg.y_max();
  return vp;
}

std::string render_svg(const scene::VectorScene& s, const model::ModelOutput& out, const ModelConfig& cfg,
                       const Viewport& vp) {
  std::ostringstream os;
  const double legend_h = 90;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(vp.width()) << "\" height=\""
     << num(vp.height() + legend_h) << "\" viewBox=\"0 0 " << num(vp.width()) << " " << num(vp.height() + legend_h)
     << "\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"" << num(vp.width()) << "\" height=\"" << num(vp.height() + legend_h)
     << "\" fill=\"white\"/>\n";

  os << "  <g id=\"grid\" stroke=\"#eeeeee\" stroke-width=\"0.5\">\n";
  for (double x = std::ceil(vp.x_min); x <= vp.x_max; x += 1.0) {
    const auto a = vp.to_svg({x, vp.y_min}), b = vp.to_svg({x, vp.y_max});
    os << "    <line x1=\"" << num(a.x) << "\" y1=\"" << num(a.y) << "\" x2=\"" << num(b.x) << "\" y2=\"" << num(b.y)
       << "\"/>\n";
  }
  for (double y = std::ceil(vp.y_min); y <= vp.y_max; y += 1.0) {
    const auto a = vp.to_svg({vp.x_min, y}), b = vp.to_svg({vp.x_max, y});
    os << "    <line x1=\"" << num(a.x) << "\" y1=\"" << num(a.y) << "\" x2=\"" << num(b.x) << "\" y2=\"" << num(b.y)
       << "\"/>\n";
  }
  os << "  </g>\n";

  for (const auto& line : s.map)
    polyline(os, line.points, vp,
             std::string("class=\"gt-map\" stroke=\"") + kMapColor[static_cast<int>(line.cls) % 2] +
                 "\" stroke-width=\"2\"");
  for (const auto& p : eval::surviving_map_predictions(out))
    polyline(os, p.points, vp,
             std::string("class=\"pred-map\" stroke=\"") + kMapColor[p.cls % 2] +
                 "\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"");

  for (const auto& a : s.agents) {
    std::vector<Point2> path{{a.history.back().x, a.history.back().y}};
    for (const auto& p : a.future) path.push_back({p.x, p.y});
    polyline(os, path, vp, "class=\"agent gt-agent\" stroke=\"#d08000\" stroke-width=\"2\"");
    std::vector<Point2> box;
    for (auto c : eval::corners({{a.history.back().x, a.history.back().y}, a.history.back().heading, a.length, a.width}))
      box.push_back(c);
    os << "  <polygon class=\"agent\" fill=\"#d08000\" fill-opacity=\"0.4\" points=\"" << points_attr(box, vp)
       << "\"/>\n";
  }
  const auto exist = out.agent_existence_logits.values();
  for (std::size_t a = 0; a < out.n_agents; ++a) {
    if (exist[a] < 0.0) continue;
    const std::size_t per_mode = cfg.N_P * 2;
    for (std::size_t mode = 0; mode < cfg.N_I; ++mode)
      polyline(os, slice(out.agent_trajectories.values().subspan((a * cfg.N_I + mode) * per_mode, per_mode)), vp,
               "class=\"agent pred-agent\" stroke=\"#d08000\" stroke-width=\"1\" stroke-dasharray=\"3,3\"");
  }

  std::vector<Point2> ego_gt{{0.0, 0.0}};
  ego_gt.insert(ego_gt.end(), s.ego_future.begin(), s.ego_future.end());
  polyline(os, ego_gt, vp, "id=\"gt-ego\" stroke=\"#1a9e3a\" stroke-width=\"3\"");
  const std::size_t cmd = model::commanded_mode(s.command, cfg.K_I);
  for (std::size_t mode = 0; mode < cfg.K_I; ++mode) {
    const auto pts = slice(out.ego_trajectories.values().subspan(mode * cfg.K_P * 2, cfg.K_P * 2));
    if (mode == cmd)
      polyline(os, pts, vp, "id=\"pred-ego\" stroke=\"#c0142c\" stroke-width=\"2.5\"");
    else
      polyline(os, pts, vp,
               "id=\"pred-ego-mode" + std::to_string(mode) + "\" stroke=\"#c0142c\" stroke-opacity=\"0.35\" " +
                   "stroke-width=\"1.5\"");
  }
  std::vector<Point2> ego_box;
  for (auto c : eval::corners({{0.0, 0.0}, 0.0, scene::kEgoLength, scene::kEgoWidth})) ego_box.push_back(c);
  os << "  <polygon id=\"ego\" fill=\"#1a9e3a\" points=\"" << points_attr(ego_box, vp) << "\"/>\n";

  const double ly = vp.height() + 10;
  const struct {
    const char* label;
    const char* color;
    const char* dash;
  } legend[] = {{"GT map", "#444444", ""},        {"predicted map", "#444444", "6,4"},
                {"agent GT future", "#d08000", ""}, {"agent predicted modes", "#d08000", "3,3"},
                {"ego GT", "#1a9e3a", ""},          {"ego predicted (commanded mode solid)", "#c0142c", ""}};
  os << "  <g id=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t k = 0; k < std::size(legend); ++k) {
    const double x = 10 + static_cast<double>(k % 2) * (vp.width() / 2), y = ly + 12 + static_cast<double>(k / 2) * 22;
    os << "    <line x1=\"" << num(x) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x + 30) << "\" y2=\"" << num(y)
       << "\" stroke=\"" << legend[k].color << "\" stroke-width=\"2\"";
    if (*legend[k].dash) os << " stroke-dasharray=\"" << legend[k].dash << "\"";
    os << "/>\n    <text x=\"" << num(x + 36) << "\" y=\"" << num(y + 4) << "\">" << legend[k].label << "</text>\n";
  }
  os << "  </g>\n</svg>\n";
  return os.str();
}

void emit_plot(const scene::VectorScene& s, const model::ModelOutput& out, const ModelConfig& cfg, const Viewport& vp,
               const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw RuntimeFailure("cannot write plot " + path.string());
  f << render_svg(s, out, cfg, vp);
  if (!f) throw RuntimeFailure("failed writing plot " + path.string());
}

}  // namespace invd::plot
