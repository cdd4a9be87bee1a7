#include "fpr/coarse_registration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fpr/error.hpp"
#include "fpr/random.hpp"

namespace fpr {
namespace {

constexpr double kMinTriangleArea = 0.05;  // m^2, rejects near-collinear samples
constexpr int kRefitRounds = 10;

bool well_conditioned(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm() > kMinTriangleArea;
}

std::size_t count_inliers(const Pose& t, std::span<const Vec3> q, std::span<const Vec3> r, double d2) {
  const Mat3 rot = t.rotation_matrix();
  const Vec3& tr = t.translation();
  std::size_t n = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if ((rot * q[i] + tr - r[i]).squaredNorm() < d2) ++n;
  }
  return n;
}

}  // namespace

CoarseResult ransac_register(const CorrespondenceSet& corr, std::span<const Vec3> query_points,
                             std::span<const Vec3> ref_points, const RansacConfig& config) {
  CoarseResult result;
  if (corr.size() < 3) {
    result.reason = "insufficient correspondences";
    return result;
  }
  for (const Correspondence& c : corr) {
    if (c.query >= query_points.size() || c.ref >= ref_points.size()) {
      throw DataError("ransac: correspondence index out of range");
    }
  }

  // Canonical order makes the sampled hypotheses independent of input order.
  std::vector<std::size_t> order(corr.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(corr[a].query, corr[a].ref) < std::tie(corr[b].query, corr[b].ref);
  });
  const std::size_t n = order.size();
  std::vector<Vec3> q(n), r(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = query_points[corr[order[i]].query];
    r[i] = ref_points[corr[order[i]].ref];
  }

  const double thr = config.inlier_distance;
  const double thr2 = thr * thr;
  Rng rng(config.seed);
  Pose best;
  std::size_t best_count = 0;
  const std::array<double, 3> unit{1.0, 1.0, 1.0};
  for (int it = 0; it < config.max_iterations; ++it) {
    std::array<std::size_t, 3> s{};
    s[0] = rng.index(n);
    do s[1] = rng.index(n); while (s[1] == s[0]);
    do s[2] = rng.index(n); while (s[2] == s[0] || s[2] == s[1]);
    // Rigid motions preserve lengths; skip samples that cannot agree.
    bool consistent = true;
    for (int a = 0; a < 3 && consistent; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        const double dq = (q[s[a]] - q[s[b]]).norm();
        const double dr = (r[s[a]] - r[s[b]]).norm();
        if (std::abs(dq - dr) > 2.0 * thr) consistent = false;
      }
    }
    if (!consistent) continue;
    if (!well_conditioned(q[s[0]], q[s[1]], q[s[2]]) || !well_conditioned(r[s[0]], r[s[1]], r[s[2]])) continue;
    const std::array<Vec3, 3> sq{q[s[0]], q[s[1]], q[s[2]]};
    const std::array<Vec3, 3> sr{r[s[0]], r[s[1]], r[s[2]]};
    Pose hyp;
    if (!weighted_kabsch(sq, sr, unit, hyp)) continue;
    const std::size_t count = count_inliers(hyp, q, r, thr2);
    if (count > best_count) {
      best_count = count;
      best = hyp;
      if (static_cast<double>(best_count) >= config.early_exit_ratio * static_cast<double>(n)) break;
    }
  }
  if (best_count < 3) {
    result.reason = "no consistent hypothesis";
    return result;
  }

  // Robust refit: Tukey-weighted Kabsch over the current inliers.
  Pose current = best;
  std::vector<double> w(n);
  for (int round = 0; round < kRefitRounds; ++round) {
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double res = (current * q[i] - r[i]).norm();
      const double u = res / thr;
      w[i] = u < 1.0 ? (1.0 - u * u) * (1.0 - u * u) : 0.0;
      used += w[i] > 0.0 ? 1 : 0;
    }
    if (used < 3) break;
    Pose refit;
    if (!weighted_kabsch(q, r, w, refit)) break;
    const PoseError step = pose_error(current, refit);
    current = refit;
    if (step.translation < 1e-6 && step.rotation_deg < 1e-6) break;
  }

  result.transform = current;
  for (std::size_t i = 0; i < n; ++i) {
    if ((current * q[i] - r[i]).squaredNorm() < thr2) result.inliers.push_back(order[i]);
  }
  std::sort(result.inliers.begin(), result.inliers.end());
  result.inlier_ratio = static_cast<double>(result.inliers.size()) / static_cast<double>(n);
  if (result.inliers.size() < config.min_inliers) {
    result.reason = "too few inliers";
  } else if (result.inlier_ratio < config.min_inlier_ratio) {
    result.reason = "low inlier ratio";
  } else {
    result.accepted = true;
    result.reason = "accepted";
  }
  return result;
}

Eigen::MatrixXd sgv_consistency_matrix(const CorrespondenceSet& corr, std::span<const Vec3> query_points,
                                       std::span<const Vec3> ref_points, double epsilon) {
  const auto n = static_cast<Eigen::Index>(corr.size());
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const Vec3& qa = query_points[corr[a].query];
    const Vec3& ra = ref_points[corr[a].ref];
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const double dq = (qa - query_points[corr[b].query]).norm();
      const double dr = (ra - ref_points[corr[b].ref]).norm();
      if (std::abs(dq - dr) < epsilon) c(a, b) = c(b, a) = 1.0;
    }
  }
  return c;
}

double leading_eigenvalue(const Eigen::MatrixXd& matrix, int max_iterations, double tolerance) {
  const Eigen::Index n = matrix.rows();
  if (n == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double lambda = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd w = matrix * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (!(norm > 0.0)) return 0.0;
    v = w / norm;
    if (std::abs(next - lambda) <= tolerance * std::max(1.0, std::abs(next))) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

double sgv_check(const CorrespondenceSet& corr, std::span<const Vec3> query_points,
                 std::span<const Vec3> ref_points, double epsilon) {
  if (corr.size() < 2) return 0.0;
  const Eigen::MatrixXd c = sgv_consistency_matrix(corr, query_points, ref_points, epsilon);
  return leading_eigenvalue(c) / static_cast<double>(corr.size());
}

CycleQuad CycleQuad::generic(const Pose& ij, const Pose& jk, const Pose& kl, const Pose& li) {
  return {Form::kGeneric, {ij, jk, kl, li}};
}

CycleQuad CycleQuad::online(const Pose& i_i1, const Pose& i1_j, const Pose& j_j1, const Pose& i_j1) {
  return {Form::kOnline, {i_i1, i1_j, j_j1, i_j1}};
}

CycleQuad CycleQuad::multi_mission(const Pose& ij, const Pose& jl, const Pose& kl, const Pose& ik) {
  return {Form::kMultiMission, {ij, jl, kl, ik}};
}

CycleQuad CycleQuad::relocalization(const Pose& map_base_now, const Pose& map_base_prev,
                                    const Pose& odom_base_prev, const Pose& odom_base_now) {
  return {Form::kRelocalization, {map_base_now, map_base_prev, odom_base_prev, odom_base_now}};
}

Pose CycleQuad::product() const {
  const auto& t = transforms_;
  switch (form_) {
    case Form::kGeneric:
      return t[0] * t[1] * t[2] * t[3];
    case Form::kOnline:
      return t[0] * t[1] * t[2] * t[3].inverse();
    case Form::kMultiMission:
      return t[0] * t[1] * t[2].inverse() * t[3].inverse();
    case Form::kRelocalization:
      return t[0].inverse() * t[1] * t[2].inverse() * t[3];
  }
  return {};
}

CycleCheck cycle_check(const CycleQuad& quad, const CycleTolerance& tolerance) {
  CycleCheck out;
  out.residual = pose_error(Pose::identity(), quad.product());
  out.pass = out.residual.translation <= tolerance.translation && out.residual.rotation_deg <= tolerance.rotation_deg;
  return out;
}

}  // namespace fpr
