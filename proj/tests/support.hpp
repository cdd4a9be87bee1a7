#pragma once

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "fpr/forest_sim.hpp"
#include "fpr/geometry.hpp"
#include "fpr/random.hpp"

namespace fpr::test {

inline constexpr double kDeg = std::numbers::pi / 180.0;

inline Pose random_pose(Rng& rng, double extent = 10.0) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return {q, Vec3(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent))};
}

inline Vec3 random_point(Rng& rng, double extent = 10.0) {
  return {rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent)};
}

inline std::vector<Vec3> random_points(Rng& rng, std::size_t n, double extent = 10.0) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_point(rng, extent));
  return out;
}

// Rotation angle from the matrix entries alone, independent of the library.
inline double angle_deg(const Mat3& r) {
  return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0)) / kDeg;
}

inline double translation_gap(const Pose& a, const Pose& b) { return (a.translation() - b.translation()).norm(); }

inline double rotation_gap_deg(const Pose& a, const Pose& b) {
  return angle_deg(a.rotation_matrix().transpose() * b.rotation_matrix());
}

/// Shared dense world used by the slower simulator-backed tests.
inline const ForestWorld& dense_world() {
  static const ForestWorld world = generate_world(ForestPreset::kDense, 4242);
  return world;
}

/// Noise-free sensor for exact geometric checks.
inline SensorModel quiet_xt32() {
  SensorModel s = SensorModel::xt32();
  s.range_noise = 0.0;
  return s;
}

}  // namespace fpr::test
