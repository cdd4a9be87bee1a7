#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "fpr/geometry.hpp"

namespace fpr {

using Vec2 = Eigen::Vector2d;

/// Truncated cone standing on the terrain.
struct Tree {
  Vec2 position = Vec2::Zero();
  double radius = 0.2;  // at the base, meters
  double height = 15.0;
  double taper = 0.0;   // radius lost per meter of height
  double base_z = 0.0;

  double radius_at(double z) const { return radius - taper * (z - base_z); }
};

/// Understory clutter (shrubs, dead wood) as small spheres.
struct ClutterBlob {
  Vec3 center = Vec3::Zero();
  double radius = 0.2;
};

/// Constant base height plus an optional bilinear heightfield.
struct Terrain {
  double base = 0.0;
  Vec2 origin = Vec2::Zero();  // position of sample (0, 0)
  double cell = 2.0;
  int nx = 0;
  int ny = 0;
  std::vector<double> heights;  // row-major, ny rows of nx samples

  bool is_flat() const { return heights.empty(); }
  double height(double x, double y) const;
};

enum class ForestPreset { kDense, kSparse, kHilly };

std::string to_string(ForestPreset preset);
ForestPreset parse_preset(const std::string& text);

struct ForestWorld {
  ForestPreset preset = ForestPreset::kDense;
  std::uint64_t seed = 0;
  Vec2 min_corner = Vec2::Zero();
  Vec2 max_corner = Vec2::Zero();
  double min_spacing = 0.0;
  double clutter_density = 0.0;  // blobs per hectare
  std::vector<Tree> trees;
  std::vector<ClutterBlob> clutter;
  Terrain terrain;

  double area_ha() const { return (max_corner - min_corner).prod() / 10000.0; }
  bool contains(const Vec2& p) const;

  /// The same world with every object moved by `pose`. Only rotations about
  /// +z and flat terrain are supported (trees must stay vertical).
  ForestWorld transformed(const Pose& pose) const;

  void save_json(std::ostream& out) const;
  void save_json(const std::filesystem::path& path) const;
  static ForestWorld load_json(std::istream& in);
  static ForestWorld load_json(const std::filesystem::path& path);
};

struct WorldSpec {
  ForestPreset preset = ForestPreset::kDense;
  std::uint64_t seed = 0;
  Vec2 min_corner{-50.0, -50.0};
  Vec2 max_corner{50.0, 50.0};
};

/// Poisson-disk forest. Targets: dense ~550 trees/ha at 2.5 m spacing,
/// sparse ~120/ha at 5 m on flat ground, hilly ~350/ha at 3 m with +/-5 m relief.
ForestWorld generate_world(const WorldSpec& spec);
ForestWorld generate_world(ForestPreset preset, std::uint64_t seed);

struct SensorModel {
  int beams = 32;
  double vertical_fov_deg = 30.0;  // symmetric about the horizon
  double horizontal_resolution_deg = 0.4;
  double max_range = 50.0;
  double min_range = 0.5;
  double range_noise = 0.02;  // 1-sigma, meters
  double scan_rate_hz = 10.0;

  static SensorModel xt32();
  static SensorModel qt64();
  /// Throws ConfigError unless the FOV is in (0, 180) and ranges are positive.
  void validate() const;
};

/// Ray caster over an immutable world; safe to share between threads.
class ForestScene {
 public:
  explicit ForestScene(const ForestWorld& world, double cell = 5.0);

  /// Scan in the sensor frame of `pose`. Range noise is drawn from `seed`.
  /// Throws DataError when the pose is not above the terrain.
  PointCloud render(const SensorModel& sensor, const Pose& pose, std::uint64_t seed) const;

  /// Distance along a unit ray to the first surface, or a negative value.
  double cast(const Vec3& origin, const Vec3& direction, double max_range, const Vec2& skip_xy) const;

  const ForestWorld& world() const { return world_; }

 private:
  std::vector<std::uint32_t> const& bucket(int ix, int iy) const;

  ForestWorld world_;
  double cell_;
  Vec2 grid_origin_;
  int gx_ = 0;
  int gy_ = 0;
  std::vector<std::vector<std::uint32_t>> buckets_;  // tree ids, then clutter ids offset by trees.size()
};

PointCloud render_scan(const ForestWorld& world, const SensorModel& sensor, const Pose& pose, std::uint64_t seed);

enum class PathShape { kFigureEight, kCircle, kRectangle, kPolyline };

struct PathSpec {
  PathShape shape = PathShape::kFigureEight;
  Vec2 center = Vec2::Zero();
  double radius = 20.0;               // circle and figure-eight lobes
  double width = 40.0;                // rectangle
  double height = 40.0;               // rectangle
  std::vector<Vec2> waypoints;        // polyline
  double laps = 1.0;                  // fractional laps stop part-way round
  double lateral_offset = 0.0;        // meters to the left of the direction of travel
  double speed = 1.5;                 // m/s
  double keyframe_rate_hz = 1.0;
  double sensor_height = 1.0;         // above terrain
  double start_time = 0.0;
  bool reverse = false;

  /// Arc length of one traversal of all laps.
  double length() const;
};

/// Odometry drift: a world-frame bias proportional to distance travelled
/// whose direction wanders, plus a heading random walk.
struct DriftModel {
  double translation_fraction = 0.01;
  double direction_walk_deg = 2.0;  // per sqrt(meter)
  double yaw_walk_deg = 0.02;       // per sqrt(meter)
  std::uint64_t seed = 0;

  static DriftModel none() { return {0.0, 0.0, 0.0, 0}; }
};

struct Trajectory {
  std::vector<double> timestamps;
  std::vector<Pose> ground_truth;
  std::vector<Pose> odometry;
  std::vector<PointCloud> scans;  // empty when rendering is skipped
  double length = 0.0;

  std::size_t size() const { return timestamps.size(); }
};

/// Keyframe poses along the path plus drifted odometry. Throws DataError
/// when the path leaves the world.
Trajectory simulate_trajectory(const ForestWorld& world, const PathSpec& path, const DriftModel& drift);

/// Applies the drift model to a ground-truth pose sequence.
std::vector<Pose> drifted_odometry(const std::vector<Pose>& ground_truth, const DriftModel& drift);

/// Renders one scan per keyframe (parallel across poses; scan k uses
/// mix_seed(seed, k)).
void render_trajectory(const ForestWorld& world, const SensorModel& sensor, std::uint64_t seed,
                       Trajectory& trajectory, unsigned threads = 0);

}  // namespace fpr
