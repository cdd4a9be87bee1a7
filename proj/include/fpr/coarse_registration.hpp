#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fpr/features.hpp"
#include "fpr/geometry.hpp"

namespace fpr {

struct RansacConfig {
  int max_iterations = 2000;
  double inlier_distance = 0.5;   // meters
  double early_exit_ratio = 0.8;
  std::size_t min_inliers = 10;
  double min_inlier_ratio = 0.2;
  std::uint64_t seed = 1;
};

/// Result of RANSAC over keypoint correspondences. `transform` maps query
/// points into the reference frame (query expressed in reference frame).
struct CoarseResult {
  Pose transform;
  std::vector<std::size_t> inliers;  // indices into the correspondence set
  double inlier_ratio = 0.0;
  double sgv_score = 0.0;
  bool accepted = false;
  std::string reason;
};

/// 3-point Kabsch hypotheses, max-inlier selection and a robust refit on
/// the inliers. Deterministic for a given seed and independent of the
/// order of `corr`.
CoarseResult ransac_register(const CorrespondenceSet& corr, std::span<const Vec3> query_points,
                             std::span<const Vec3> ref_points, const RansacConfig& config = {});

/// Spectral geometric verification: leading eigenvalue of the binary
/// pairwise length-consistency matrix (unit diagonal) divided by |corr|.
double sgv_check(const CorrespondenceSet& corr, std::span<const Vec3> query_points,
                 std::span<const Vec3> ref_points, double epsilon = 0.3);

/// Builds the 0/1 consistency matrix used by sgv_check.
Eigen::MatrixXd sgv_consistency_matrix(const CorrespondenceSet& corr, std::span<const Vec3> query_points,
                                       std::span<const Vec3> ref_points, double epsilon);

/// Leading eigenvalue of a symmetric non-negative matrix by power iteration.
double leading_eigenvalue(const Eigen::MatrixXd& matrix, int max_iterations = 100, double tolerance = 1e-8);

/// Four relative transforms whose product should be the identity. Each
/// factory names its arguments after the roles they play in the cycle;
/// `rel(a, b)` denotes frame b expressed in frame a.
class CycleQuad {
 public:
  enum class Form { kGeneric, kOnline, kMultiMission, kRelocalization };

  /// rel(i,j) rel(j,k) rel(k,l) rel(l,i)
  static CycleQuad generic(const Pose& ij, const Pose& jk, const Pose& kl, const Pose& li);
  /// Online SLAM over nodes i, i+1 (older) and j, j+1 (newer):
  /// rel(i,i+1) rel(i+1,j) rel(j,j+1) rel(i,j+1)^-1
  static CycleQuad online(const Pose& i_i1, const Pose& i1_j, const Pose& j_j1, const Pose& i_j1);
  /// Multi-mission with i,j in one mission and k,l in the other:
  /// rel(i,j) rel(j,l) rel(k,l)^-1 rel(i,k)^-1
  static CycleQuad multi_mission(const Pose& ij, const Pose& jl, const Pose& kl, const Pose& ik);
  /// Relocalization against the last successful fix:
  /// T_MB(t)^-1 T_MB(t-1) T_OB(t-1)^-1 T_OB(t)
  static CycleQuad relocalization(const Pose& map_base_now, const Pose& map_base_prev, const Pose& odom_base_prev,
                                  const Pose& odom_base_now);

  Form form() const { return form_; }
  const std::array<Pose, 4>& transforms() const { return transforms_; }
  Pose product() const;

 private:
  CycleQuad(Form form, std::array<Pose, 4> t) : form_(form), transforms_(t) {}

  Form form_;
  std::array<Pose, 4> transforms_;
};

struct CycleTolerance {
  double translation = 0.10;  // meters
  double rotation_deg = 1.0;
};

struct CycleCheck {
  bool pass = false;
  PoseError residual;
};

/// Rejects when either the translation or the rotation residual exceeds
/// its tolerance.
CycleCheck cycle_check(const CycleQuad& quad, const CycleTolerance& tolerance = {});

}  // namespace fpr
