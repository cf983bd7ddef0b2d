#pragma once

// Synthetic vectorized driving scenes in the ego frame (x forward, y left, meters).

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace invd::scene {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  bool operator==(const Pose&) const = default;
};

enum class MapClass : std::uint8_t { boundary = 0, divider = 1 };
inline constexpr std::size_t kMapClassCount = 2;

std::string_view to_string(MapClass c);
MapClass map_class_from_string(std::string_view s);

struct Polyline {
  std::vector<Point2> points;
  MapClass cls = MapClass::divider;
  bool operator==(const Polyline&) const = default;
};

struct AgentTrack {
  double length = 4.5;
  double width = 1.8;
  std::vector<Pose> history;  // oldest first, last entry is the current pose (t = 0)
  std::vector<Pose> future;   // t = dt, 2 dt, ...
  bool operator==(const AgentTrack&) const = default;
};

enum class Command : std::uint8_t { left = 0, straight = 1, right = 2 };
inline constexpr std::size_t kCommandCount = 3;

std::string_view to_string(Command c);
Command command_from_string(std::string_view s);

struct VectorScene {
  std::vector<Polyline> map;
  std::vector<AgentTrack> agents;
  std::vector<Point2> ego_future;  // t = dt .. future_steps * dt; the ego sits at the origin at t = 0
  Command command = Command::straight;
  std::uint64_t seed = 0;
  bool operator==(const VectorScene&) const = default;
};

struct SceneGenConfig {
  double range_forward = 60.0;
  double range_backward = 15.0;
  double range_lateral = 30.0;
  double resolution = 0.5;
  double lane_width = 3.5;
  int lane_count_min = 2;
  int lane_count_max = 4;
  int agent_count_min = 1;
  int agent_count_max = 6;
  double curvature_max = 0.012;       // |curvature| upper bound, 1/m
  double straight_curvature = 0.001;  // |curvature| bound for straight roads
  double speed_min = 5.0;
  double speed_max = 12.0;
  double agent_speed_noise = 0.5;
  double ego_speed_noise = 0.3;
  double position_noise = 0.05;
  double dt = 0.5;
  int history_steps = 4;
  int future_steps = 6;
  double command_threshold_deg = 5.0;
  double point_spacing = 2.0;
  std::size_t train_scenes = 512;
  std::size_t eval_scenes = 128;

  // Throws ValidationError on inconsistent values.
  void validate() const;

  double x_min() const { return -range_backward; }
  double x_max() const { return range_forward; }
  double y_min() const { return -range_lateral; }
  double y_max() const { return range_lateral; }
  bool in_range(Point2 p) const;

  bool operator==(const SceneGenConfig&) const = default;
};

inline constexpr double kMaxAgentSpeed = 25.0;
inline constexpr double kEgoLength = 4.0;
inline constexpr double kEgoWidth = 1.8;

// Deterministic in (seed, cfg).
VectorScene generate_scene(std::uint64_t seed, const SceneGenConfig& cfg);
std::vector<VectorScene> generate_scenes(std::uint64_t first_seed, std::size_t count, const SceneGenConfig& cfg);

// Heading of the last ego chord minus heading of the first chord (from the origin).
double net_heading_change(const std::vector<Point2>& ego_future);

// Empty when every scene invariant holds; otherwise one message per violation.
std::vector<std::string> validate_scene(const VectorScene& scene, const SceneGenConfig& cfg);

bool segments_intersect(Point2 a0, Point2 a1, Point2 b0, Point2 b1);
bool polylines_intersect(const Polyline& a, const Polyline& b);

// Uniform arc-length resampling to exactly `count` points.
std::vector<Point2> resample_polyline(const std::vector<Point2>& pts, std::size_t count);

double point_segment_distance(Point2 p, Point2 a, Point2 b);
double point_polyline_distance(Point2 p, const std::vector<Point2>& line);

}  // namespace invd::scene
