#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "fpr/forest_sim.hpp"
#include "fpr/geometry.hpp"

namespace fpr {

/// On-disk keyframe sequence:
///   trajectory.graph  pose-graph text file: odometry poses, odometry
///                     factors and the scan path of every node
///   ground_truth.txt  "t tx ty tz qx qy qz qw" per keyframe, optional
///   scans/000000.ply  one sensor-frame scan per keyframe
struct Dataset {
  std::vector<double> timestamps;
  std::vector<Pose> odometry;
  std::optional<std::vector<Pose>> ground_truth;
  std::vector<PointCloud> scans;

  std::size_t size() const { return timestamps.size(); }
  std::vector<Vec3> truth_positions() const;
};

void write_dataset(const std::filesystem::path& dir, const Trajectory& trajectory);
/// Throws DataError on missing or inconsistent files, including missing
/// ground truth when `require_truth` is set.
Dataset read_dataset(const std::filesystem::path& dir, bool require_truth = false);

}  // namespace fpr
