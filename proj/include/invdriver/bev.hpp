#pragma once

#include <cstddef>
#include <vector>

#include "invdriver/scene.hpp"

namespace invd::scene {

// Channel layout of a BEV cell. Map-class channels are indexed by MapClass.
enum BevChannel : std::size_t {
  kBoundaryChannel = 0,
  kDividerChannel = 1,
  kAgentChannel = 2,
  kVelocityXChannel = 3,
  kVelocityYChannel = 4,
  kBevChannelCount = 5,
};

// Rows run along x (forward), columns along y (left). Row-major [height][width][channel].
struct BevGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  double resolution = 0.5;
  double x_min = 0.0;
  double y_min = 0.0;
  std::vector<double> data;

  static BevGrid empty(const SceneGenConfig& cfg);

  double& at(std::size_t r, std::size_t c, std::size_t ch) { return data[(r * width + c) * kBevChannelCount + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return data[(r * width + c) * kBevChannelCount + ch];
  }
  Point2 cell_center(std::size_t r, std::size_t c) const {
    return {x_min + (static_cast<double>(r) + 0.5) * resolution, y_min + (static_cast<double>(c) + 0.5) * resolution};
  }
  // Cell containing p, or false when p lies outside the grid.
  bool cell_of(Point2 p, std::size_t& r, std::size_t& c) const;
};

// Paints map polylines as anti-aliased strokes (1 - distance / resolution, clipped at 0)
// and agents' current footprints as filled oriented rectangles carrying (vx, vy).
BevGrid rasterize_bev(const VectorScene& scene, const SceneGenConfig& cfg);

}  // namespace invd::scene
