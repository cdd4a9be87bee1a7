#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fpr/geometry.hpp"

namespace fpr {

struct IcpConfig {
  int max_iterations = 30;
  double max_match_distance = 1.0;  // meters
  double trim_fraction = 0.1;       // worst residuals dropped each iteration
  double converge_translation = 1e-4;
  double converge_rotation = 1e-4;  // radians
  // Acceptance gates.
  double max_residual = 0.20;          // meters, point-to-plane RMSE
  double min_inlier_fraction = 0.20;   // of the query cloud size
  double max_correction = 1.0;         // meters, versus the initial guess
  int normal_neighbors = 16;
};

struct IcpIteration {
  int iteration = 0;
  double rmse = 0.0;
  std::size_t inliers = 0;
};

/// Outcome of one refinement. Every gate value is stored so acceptance can be
/// re-derived from the record alone.
struct IcpResult {
  Pose transform;  // query expressed in the reference frame
  double residual_rmse = 0.0;
  std::size_t inlier_count = 0;
  std::size_t inlier_floor = 0;
  PoseError correction;  // pose_error(init, transform)
  int iterations = 0;
  bool accepted = false;
  std::string reason;
  std::vector<IcpIteration> trace;

  // Thresholds the verdict was taken against.
  double max_residual = 0.0;
  double max_correction = 0.0;
};

/// Trimmed point-to-plane ICP of `query` onto `ref` starting from `init`.
/// The reference cloud needs normals; they are estimated when missing.
/// Throws DataError when either cloud has fewer than 100 points.
IcpResult icp_refine(const PointCloud& query, const PointCloud& ref, const Pose& init, const IcpConfig& config = {});

/// iteration,rmse,inliers per line.
void write_icp_trace_csv(std::ostream& out, const IcpResult& result);

}  // namespace fpr
