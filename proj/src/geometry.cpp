#include "fpr/geometry.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <numbers>

#include "fpr/error.hpp"

namespace fpr {
namespace {

// Below this angle the closed forms lose precision; Taylor series are used.
constexpr double kSmallAngle = 0.05;

}  // namespace

Pose::Pose(const Eigen::Quaterniond& q, const Vec3& t) : q_(q.normalized()), t_(t) {}

Pose::Pose(const Mat3& r, const Vec3& t) : q_(Eigen::Quaterniond(r).normalized()), t_(t) {}

Pose Pose::from_yaw(double yaw, const Vec3& t) {
  return {Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitZ())), t};
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  return {Mat3(m.topLeftCorner<3, 3>()), Vec3(m.topRightCorner<3, 1>())};
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = t_;
  return m;
}

double Pose::yaw() const {
  const Vec3 x = q_ * Vec3::UnitX();
  return std::atan2(x.y(), x.x());
}

Pose Pose::inverse() const {
  const Eigen::Quaterniond qi = q_.conjugate();
  return {qi, -(qi * t_)};
}

Pose Pose::operator*(const Pose& other) const { return {q_ * other.q_, q_ * other.t_ + t_}; }

bool Pose::is_finite() const { return q_.coeffs().allFinite() && t_.allFinite(); }

double rotation_angle(const Mat3& r) {
  // atan2 form of arccos((trace - 1) / 2): same angle, but keeps full
  // precision near 0 and pi where the plain arccos flattens out.
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = std::clamp(0.5 * axis.norm(), 0.0, 1.0);
  return std::atan2(s, c);
}

PoseError pose_error(const Pose& a, const Pose& b) {
  const Pose residual = relative(a, b);
  const Eigen::Quaterniond& q = residual.rotation();
  const double angle = 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
  return {residual.translation().norm(), angle * 180.0 / std::numbers::pi};
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(phi);
  double a, b;
  if (theta < kSmallAngle) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 so3_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  Vec3 phi = aa.angle() * aa.axis();
  if (aa.angle() > std::numbers::pi) phi = (aa.angle() - 2.0 * std::numbers::pi) * aa.axis();
  return phi;
}

Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(phi);
  double a, b;
  if (theta < kSmallAngle) {
    a = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
    b = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
  } else {
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + a * k + b * k * k;
}

Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(phi);
  double c;
  if (theta < kSmallAngle) {
    c = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0;
  } else {
    c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() - 0.5 * k + c * k * k;
}

Pose se3_exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return {so3_exp(phi), so3_left_jacobian(phi) * rho};
}

Vec6 se3_log(const Pose& pose) {
  const Vec3 phi = so3_log(pose.rotation_matrix());
  Vec6 xi;
  xi.head<3>() = so3_left_jacobian_inverse(phi) * pose.translation();
  xi.tail<3>() = phi;
  return xi;
}

namespace {

// Off-diagonal block of the SE(3) left Jacobian.
Mat3 se3_q_block(const Vec3& rho, const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 p = skew(phi);
  const Mat3 r = skew(rho);
  double c1, c2, c3;
  if (theta < kSmallAngle) {
    const double t4 = theta2 * theta2;
    c1 = 1.0 / 6.0 - theta2 / 120.0 + t4 / 5040.0;
    c2 = 1.0 / 24.0 - theta2 / 720.0 + t4 / 40320.0;
    c3 = 1.0 / 120.0 - theta2 / 2520.0 + t4 / 120960.0;
  } else {
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    const double t3 = theta2 * theta;
    c1 = (theta - s) / t3;
    c2 = (theta2 + 2.0 * c - 2.0) / (2.0 * t3 * theta);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t3 * theta2);
  }
  const Mat3 pr = p * r;
  const Mat3 rp = r * p;
  const Mat3 prp = pr * p;
  return 0.5 * r + c1 * (pr + rp + prp) + c2 * (p * pr + rp * p - 3.0 * prp) +
         c3 * (prp * p + p * prp);
}

}  // namespace

Mat6 se3_left_jacobian(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  Mat6 j = Mat6::Zero();
  const Mat3 jl = so3_left_jacobian(phi);
  j.topLeftCorner<3, 3>() = jl;
  j.bottomRightCorner<3, 3>() = jl;
  j.topRightCorner<3, 3>() = se3_q_block(rho, phi);
  return j;
}

Mat6 se3_right_jacobian(const Vec6& xi) { return se3_left_jacobian(-xi); }

Mat6 se3_adjoint(const Pose& pose) {
  const Mat3 r = pose.rotation_matrix();
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = r;
  ad.bottomRightCorner<3, 3>() = r;
  ad.topRightCorner<3, 3>() = skew(pose.translation()) * r;
  return ad;
}

void PointCloud::validate() const {
  if (!normals.empty() && normals.size() != points.size()) {
    throw DataError("point cloud: normals count does not match points");
  }
  if (!sensor_origin.allFinite()) throw DataError("point cloud: non-finite sensor origin");
  for (const Vec3& p : points) {
    if (!p.allFinite()) throw DataError("point cloud: non-finite coordinate");
  }
  for (const Vec3& n : normals) {
    if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-6) {
      throw DataError("point cloud: normal is not unit length");
    }
  }
}

PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  const Mat3 r = pose.rotation_matrix();
  const Vec3& t = pose.translation();
  out.points.reserve(cloud.points.size());
  for (const Vec3& p : cloud.points) out.points.push_back(r * p + t);
  out.normals.reserve(cloud.normals.size());
  for (const Vec3& n : cloud.normals) out.normals.push_back(r * n);
  out.sensor_origin = r * cloud.sensor_origin + t;
  return out;
}

bool weighted_kabsch(std::span<const Vec3> src, std::span<const Vec3> dst,
                     std::span<const double> weights, Pose& out) {
  if (src.size() != dst.size() || src.size() != weights.size() || src.size() < 3) return false;
  double total = 0.0;
  Vec3 cs = Vec3::Zero();
  Vec3 cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    total += weights[i];
    cs += weights[i] * src[i];
    cd += weights[i] * dst[i];
  }
  if (!(total > 0.0)) return false;
  cs /= total;
  cd /= total;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    h += weights[i] * (src[i] - cs) * (dst[i] - cd).transpose();
  }
  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Rank < 2 means all points (effectively) on a line.
  if (sv(1) <= 1e-12 * std::max(1.0, sv(0))) return false;
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
  out = Pose(r, cd - r * cs);
  return true;
}

double absolute_trajectory_error(std::span<const Vec3> estimated, std::span<const Vec3> reference) {
  if (estimated.size() != reference.size()) {
    throw DataError("trajectory error: length mismatch");
  }
  if (estimated.empty()) return 0.0;
  Pose align;
  const std::vector<double> w(estimated.size(), 1.0);
  if (!weighted_kabsch(estimated, reference, w, align)) {
    // Collinear or tiny trajectories: translation-only alignment.
    Vec3 offset = Vec3::Zero();
    for (std::size_t i = 0; i < estimated.size(); ++i) offset += reference[i] - estimated[i];
    align = Pose::from_translation(offset / static_cast<double>(estimated.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    sum += (align * estimated[i] - reference[i]).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(estimated.size()));
}

}  // namespace fpr
