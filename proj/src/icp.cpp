#include "fpr/icp.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <ostream>

#include "fpr/error.hpp"
#include "fpr/features.hpp"
#include "fpr/kd_index.hpp"

namespace fpr {
namespace {

constexpr std::size_t kMinPoints = 100;
constexpr int kBacktrackSteps = 3;

struct Match {
  std::size_t query;
  std::size_t ref;
  double residual;  // signed point-to-plane distance
};

struct Evaluation {
  std::vector<Match> kept;
  double rmse = 0.0;
};

Evaluation evaluate(const PointCloud& query, const KdIndex& index, const std::vector<Vec3>& normals, const Pose& t,
                    const IcpConfig& config) {
  Evaluation ev;
  const Mat3 r = t.rotation_matrix();
  const Vec3& tr = t.translation();
  ev.kept.reserve(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    const Vec3 x = r * query.points[i] + tr;
    const Neighbor nb = index.nearest_one(x);
    if (nb.distance > config.max_match_distance) continue;
    ev.kept.push_back({i, nb.id, normals[nb.id].dot(x - index.point(nb.id))});
  }
  const auto keep = static_cast<std::size_t>(
      std::ceil((1.0 - config.trim_fraction) * static_cast<double>(ev.kept.size())));
  if (keep < ev.kept.size()) {
    std::nth_element(ev.kept.begin(), ev.kept.begin() + static_cast<std::ptrdiff_t>(keep), ev.kept.end(),
                     [](const Match& a, const Match& b) {
                       const double ra = std::abs(a.residual);
                       const double rb = std::abs(b.residual);
                       return ra < rb || (ra == rb && a.query < b.query);
                     });
    ev.kept.resize(keep);
  }
  double sum = 0.0;
  for (const Match& m : ev.kept) sum += m.residual * m.residual;
  ev.rmse = ev.kept.empty() ? 0.0 : std::sqrt(sum / static_cast<double>(ev.kept.size()));
  return ev;
}

}  // namespace

IcpResult icp_refine(const PointCloud& query, const PointCloud& ref, const Pose& init, const IcpConfig& config) {
  if (query.size() < kMinPoints || ref.size() < kMinPoints) throw DataError("icp: clouds need at least 100 points");
  if (!init.is_finite()) throw DataError("icp: non-finite initial guess");

  const KdIndex index(ref.points);
  const std::vector<Vec3> normals =
      ref.has_normals() ? ref.normals : estimate_normals(index, config.normal_neighbors, ref.sensor_origin);

  IcpResult result;
  result.max_residual = config.max_residual;
  result.max_correction = config.max_correction;
  result.inlier_floor = static_cast<std::size_t>(std::ceil(config.min_inlier_fraction * static_cast<double>(query.size())));

  Pose current = init;
  Evaluation ev = evaluate(query, index, normals, current, config);
  bool diverged = ev.kept.size() < 3;
  if (!diverged) result.trace.push_back({0, ev.rmse, ev.kept.size()});

  for (int it = 1; it <= config.max_iterations && !diverged; ++it) {
    Mat6 h = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    const Mat3 r = current.rotation_matrix();
    for (const Match& m : ev.kept) {
      const Vec3 x = r * query.points[m.query] + current.translation();
      const Vec3& n = normals[m.ref];
      Vec6 j;
      j.head<3>() = n;
      j.tail<3>() = x.cross(n);
      h += j * j.transpose();
      g += j * m.residual;
    }
    const Vec6 delta = h.ldlt().solve(-g);
    if (!delta.allFinite()) {
      diverged = true;
      break;
    }

    // Backtrack until the trimmed error does not increase.
    bool accepted = false;
    double scale = 1.0;
    Pose candidate;
    Evaluation next;
    for (int b = 0; b <= kBacktrackSteps; ++b, scale *= 0.5) {
      const Vec6 step = scale * delta;
      candidate = Pose(so3_exp(step.tail<3>()), step.head<3>()) * current;
      next = evaluate(query, index, normals, candidate, config);
      if (next.kept.size() < 3) {
        diverged = true;
        break;
      }
      if (next.rmse <= ev.rmse) {
        accepted = true;
        break;
      }
    }
    if (diverged || !accepted) break;

    current = candidate;
    ev = std::move(next);
    result.iterations = it;
    result.trace.push_back({it, ev.rmse, ev.kept.size()});
    const Vec6 step = scale * delta;
    if (step.head<3>().norm() < config.converge_translation && step.tail<3>().norm() < config.converge_rotation) break;
  }

  result.transform = current;
  result.correction = pose_error(init, current);
  if (diverged) {
    result.reason = "icp diverged";
    return result;
  }
  result.residual_rmse = ev.rmse;
  result.inlier_count = ev.kept.size();
  if (result.residual_rmse > config.max_residual) {
    result.reason = "residual too large";
  } else if (result.inlier_count < result.inlier_floor) {
    result.reason = "too few inliers";
  } else if (result.correction.translation > config.max_correction) {
    result.reason = "correction too large";
  } else {
    result.accepted = true;
    result.reason = "accepted";
  }
  return result;
}

void write_icp_trace_csv(std::ostream& out, const IcpResult& result) {
  out << "iteration,rmse,inliers\n";
  for (const IcpIteration& it : result.trace) out << it.iteration << ',' << it.rmse << ',' << it.inliers << '\n';
}

}  // namespace fpr
