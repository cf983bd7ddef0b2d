#pragma once

// SVG rendering of one scene and the model's output for it.

#include <filesystem>
#include <string>

#include "invdriver/model.hpp"
#include "invdriver/scene.hpp"

namespace invd::plot {

using scene::Point2;

// Ego frame to SVG pixels, forward pointing up and left to the left:
//   px = margin + (y_max - y) * scale
//   py = margin + (x_max - x) * scale
struct Viewport {
  double x_min = -15, x_max = 60, y_min = -30, y_max = 30;
  double scale = 8.0;  // pixels per meter
  double margin = 20.0;

  static Viewport for_scene(const scene::SceneGenConfig& cfg);
  Point2 to_svg(Point2 p) const { return {margin + (y_max - p.y) * scale, margin + (x_max - p.x) * scale}; }
  Point2 from_svg(Point2 q) const { return {x_max - (q.y - margin) / scale, y_max - (q.x - margin) / scale}; }
  double width() const { return 2 * margin + (y_max - y_min) * scale; }
  double height() const { return 2 * margin + (x_max - x_min) * scale; }
};

// Ground-truth map solid, predicted map dashed, agent futures and the modes of
// detected agents, ego ground truth and every ego mode (the commanded one as
// id="pred-ego"), a legend and a 1 m grid.
std::string render_svg(const scene::VectorScene& s, const model::ModelOutput& out, const ModelConfig& cfg,
                       const Viewport& vp);

// Throws RuntimeFailure when the file cannot be written.
void emit_plot(const scene::VectorScene& s, const model::ModelOutput& out, const ModelConfig& cfg, const Viewport& vp,
               const std::filesystem::path& path);

}  // namespace invd::plot
