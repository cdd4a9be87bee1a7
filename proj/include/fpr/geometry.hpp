#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace fpr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Rigid transform on SE(3): x -> R x + t.
///
/// The rotation is kept as a unit quaternion and renormalized by every
/// constructor and product. Relative transforms follow
/// `relative(a, b) = a.inverse() * b`, i.e. frame b expressed in frame a.
class Pose {
 public:
  Pose() : q_(Eigen::Quaterniond::Identity()), t_(Vec3::Zero()) {}
  Pose(const Eigen::Quaterniond& q, const Vec3& t);
  Pose(const Mat3& r, const Vec3& t);

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Eigen::Quaterniond::Identity(), t}; }
  /// Rotation about +z by `yaw` radians, followed by translation t.
  static Pose from_yaw(double yaw, const Vec3& t = Vec3::Zero());
  static Pose from_matrix(const Eigen::Matrix4d& m);

  const Eigen::Quaterniond& rotation() const { return q_; }
  const Vec3& translation() const { return t_; }
  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  /// Heading of the body x axis projected on the xy plane, radians.
  double yaw() const;

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Vec3 operator*(const Vec3& p) const { return q_ * p + t_; }

  bool is_finite() const;

 private:
  Eigen::Quaterniond q_;
  Vec3 t_;
};

inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose inverse(const Pose& p) { return p.inverse(); }
/// Frame b expressed in frame a.
inline Pose relative(const Pose& a, const Pose& b) { return a.inverse() * b; }

struct PoseError {
  double translation = 0.0;   // meters
  double rotation_deg = 0.0;  // degrees, [0, 180]
};

/// Translation norm and geodesic angle of inverse(a) * b.
PoseError pose_error(const Pose& a, const Pose& b);

/// Geodesic rotation angle of R in radians, via the clamped trace formula.
double rotation_angle(const Mat3& r);

Mat3 skew(const Vec3& v);

// SE(3) tangent vectors are ordered (translation rho, rotation phi).
Mat3 so3_exp(const Vec3& phi);
Vec3 so3_log(const Mat3& r);
Mat3 so3_left_jacobian(const Vec3& phi);
Mat3 so3_left_jacobian_inverse(const Vec3& phi);

Pose se3_exp(const Vec6& xi);
Vec6 se3_log(const Pose& pose);
/// Right Jacobian of SE(3): log(exp(xi) exp(d)) ~ xi + J_r(xi)^-1 d.
Mat6 se3_right_jacobian(const Vec6& xi);
Mat6 se3_left_jacobian(const Vec6& xi);
/// Adjoint: T exp(d) T^-1 = exp(Ad(T) d).
Mat6 se3_adjoint(const Pose& pose);

/// Ordered 3D points with optional unit normals, in meters.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty, or one per point
  Vec3 sensor_origin = Vec3::Zero();

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }

  /// Throws DataError on NaN/Inf, length mismatch or non-unit normals.
  void validate() const;
};

/// p -> R p + t for points and sensor origin; normals are rotated only.
PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose);

/// Least-squares rigid transform T minimizing sum w_i |T src_i - dst_i|^2.
/// Returns false when the weighted point sets are degenerate.
bool weighted_kabsch(std::span<const Vec3> src, std::span<const Vec3> dst,
                     std::span<const double> weights, Pose& out);

/// Rigid alignment (no scale) of estimated to reference positions followed by
/// the RMS position error, meters.
double absolute_trajectory_error(std::span<const Vec3> estimated, std::span<const Vec3> reference);

}  // namespace fpr
