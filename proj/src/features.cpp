#include "fpr/features.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <tuple>

#include "fpr/error.hpp"

namespace fpr {
namespace {

constexpr int kSubBins = kFpfhBins / 3;

using VoxelKey = std::tuple<long, long, long>;

struct PairFeature {
  double theta;  // [-pi, pi]
  double alpha;  // [-1, 1]
  double phi;    // [-1, 1]
  bool valid;
};

// Darboux-frame angles with `ps` as the source point.
PairFeature darboux(const Vec3& ps, const Vec3& ns, const Vec3& pt, const Vec3& nt) {
  Vec3 d = pt - ps;
  const double len = d.norm();
  if (len == 0.0) return {0, 0, 0, false};
  d /= len;
  Vec3 v = d.cross(ns);
  const double vn = v.norm();
  if (vn == 0.0) return {0, 0, 0, false};
  v /= vn;
  const Vec3 w = ns.cross(v);
  return {std::atan2(w.dot(nt), ns.dot(nt)), v.dot(nt), ns.dot(d), true};
}

// Faces the normal toward the viewer. Surfaces seen edge-on need a
// tie-break that still turns with the scan about z.
Vec3 orient(const Vec3& normal, const Vec3& view) {
  constexpr double kEdgeOn = 1e-3;
  const double scale = view.norm();
  double side = normal.dot(view);
  if (std::abs(side) <= kEdgeOn * scale) side = normal.dot(Vec3::UnitZ().cross(view));
  if (std::abs(side) <= kEdgeOn * scale) side = normal.z();
  return side < 0.0 ? Vec3(-normal) : normal;
}

// Linear interpolation between the two nearest bin centers keeps the
// histogram continuous in the angle; theta wraps around.
void soft_bin(FpfhHistogram& h, int offset, double value, double lo, double hi, bool circular) {
  const double u = kSubBins * (value - lo) / (hi - lo) - 0.5;
  const double base = std::floor(u);
  const double frac = u - base;
  auto slot = [circular](long b) {
    if (circular) return static_cast<int>(((b % kSubBins) + kSubBins) % kSubBins);
    return static_cast<int>(std::clamp(b, 0L, static_cast<long>(kSubBins - 1)));
  };
  const long b = static_cast<long>(base);
  h(offset + slot(b)) += 1.0 - frac;
  h(offset + slot(b + 1)) += frac;
}

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw ConfigError("voxel size must be positive");
  struct Acc {
    Vec3 sum = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
    int count = 0;
  };
  std::map<VoxelKey, Acc> cells;
  const bool normals = cloud.has_normals();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const VoxelKey key{static_cast<long>(std::floor(p.x() / voxel)), static_cast<long>(std::floor(p.y() / voxel)),
                       static_cast<long>(std::floor(p.z() / voxel))};
    Acc& acc = cells[key];
    acc.sum += p;
    // Sign-align before summing: edge-on normals flip orientation easily and
    // would otherwise cancel.
    if (normals) acc.normal += acc.normal.dot(cloud.normals[i]) < 0.0 ? Vec3(-cloud.normals[i]) : cloud.normals[i];
    ++acc.count;
  }
  PointCloud out;
  out.sensor_origin = cloud.sensor_origin;
  out.points.reserve(cells.size());
  for (const auto& [key, acc] : cells) {
    out.points.push_back(acc.sum / acc.count);
    if (normals) {
      const double n = acc.normal.norm();
      out.normals.push_back(n > 0.0 ? Vec3(acc.normal / n) : Vec3::UnitZ());
    }
  }
  return out;
}

std::vector<Vec3> estimate_normals(const KdIndex& index, int k, const Vec3& viewpoint) {
  std::vector<Vec3> normals(index.size(), Vec3::UnitZ());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const Vec3& p = index.point(i);
    const auto nbrs = index.nearest(p, static_cast<std::size_t>(std::max(k, 3)));
    Vec3 mean = Vec3::Zero();
    for (const Neighbor& n : nbrs) mean += index.point(n.id);
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const Neighbor& n : nbrs) {
      const Vec3 d = index.point(n.id) - mean;
      cov += d * d.transpose();
    }
    const Vec3 view = viewpoint - p;
    Vec3 normal = Vec3::UnitZ();
    if (nbrs.size() >= 3) {
      const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
      const Eigen::Vector3d& lambda = eig.eigenvalues();  // ascending
      normal = eig.eigenvectors().col(0);
      // Degenerate neighborhoods leave the normal free in a plane (lines,
      // e.g. one trunk column hit by several beams) or in every direction.
      // Pick the direction closest to the view ray so the choice is stable.
      constexpr double kTie = 0.1;
      constexpr double kNoise = 1e-9;  // eigenvalues below this fraction of the largest are rounding
      if (lambda(1) - lambda(0) < kTie * lambda(1) || lambda(1) <= kNoise * lambda(2)) {
        Vec3 free = view;
        if (lambda(2) - lambda(1) >= kTie * lambda(2)) {
          const Vec3 axis = eig.eigenvectors().col(2);
          free -= axis.dot(free) * axis;
        }
        if (free.norm() > 1e-9) normal = free;
      }
    }
    normals[i] = orient(normal.normalized(), view);
  }
  return normals;
}

PointCloud downsample_with_normals(const PointCloud& cloud, double voxel, int normal_neighbors) {
  PointCloud down = voxel_downsample(cloud, voxel);
  down.normals.clear();
  if (down.empty()) return down;
  const KdIndex index(down.points);
  down.normals = estimate_normals(index, normal_neighbors, down.sensor_origin);
  return down;
}

FeatureSet compute_fpfh(std::span<const Vec3> points, std::span<const Vec3> normals, double radius) {
  return compute_fpfh(points, normals, radius, std::vector<bool>(points.size(), true));
}

FeatureSet compute_fpfh(std::span<const Vec3> points, std::span<const Vec3> normals, double radius,
                        const std::vector<bool>& keypoint) {
  if (points.size() != normals.size()) throw DataError("fpfh: normals count does not match points");
  if (keypoint.size() != points.size()) throw DataError("fpfh: keypoint mask size does not match points");
  FeatureSet out;
  if (points.empty()) return out;
  const KdIndex index(points);
  const std::size_t n = points.size();

  std::vector<std::vector<Neighbor>> neighborhoods(n);
  std::vector<FpfhHistogram> spfh(n, FpfhHistogram::Zero());
  // Single-point histograms are only needed for keypoints and their support.
  std::vector<bool> needed = keypoint;
  std::vector<bool> searched(n, false);
  auto neighbors_of = [&](std::size_t i) -> const std::vector<Neighbor>& {
    if (!searched[i]) {
      neighborhoods[i] = index.within(points[i], radius);
      std::erase_if(neighborhoods[i], [i](const Neighbor& nb) { return nb.id == i || nb.distance == 0.0; });
      searched[i] = true;
    }
    return neighborhoods[i];
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!keypoint[i]) continue;
    for (const Neighbor& nb : neighbors_of(i)) needed[nb.id] = true;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!needed[i]) continue;
    const auto& nbrs = neighbors_of(i);
    int used = 0;
    auto add = [&](const PairFeature& f, double weight) {
      FpfhHistogram h = FpfhHistogram::Zero();
      soft_bin(h, 0, f.theta, -std::numbers::pi, std::numbers::pi, true);
      soft_bin(h, kSubBins, f.alpha, -1.0, 1.0, false);
      soft_bin(h, 2 * kSubBins, f.phi, -1.0, 1.0, false);
      spfh[i] += weight * h;
    };
    for (const Neighbor& nb : nbrs) {
      const Vec3& pj = points[nb.id];
      const Vec3& nj = normals[nb.id];
      const PairFeature forward = darboux(points[i], normals[i], pj, nj);
      const PairFeature backward = darboux(pj, nj, points[i], normals[i]);
      if (!forward.valid || !backward.valid) continue;
      // The source is the point whose normal is closer to the connecting
      // line. Symmetric pairs (two points round one trunk) tie, and rounding
      // must not pick the frame, so near-ties count half each way.
      constexpr double kTieBand = 1e-6;
      const double gap = std::abs(forward.phi) - std::abs(backward.phi);
      if (std::abs(gap) <= kTieBand) {
        add(forward, 0.5);
        add(backward, 0.5);
      } else {
        add(gap > 0.0 ? forward : backward, 1.0);
      }
      ++used;
    }
    if (used > 0) spfh[i] /= used;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!keypoint[i]) continue;
    const auto& nbrs = neighborhoods[i];
    if (nbrs.size() < 3 || spfh[i].sum() == 0.0) continue;
    FpfhHistogram h = spfh[i];
    FpfhHistogram acc = FpfhHistogram::Zero();
    for (const Neighbor& nb : nbrs) acc += spfh[nb.id] / nb.distance;
    h += acc / static_cast<double>(nbrs.size());
    // Each of the three angle histograms carries equal mass.
    for (int s = 0; s < 3; ++s) {
      auto part = h.segment<kSubBins>(s * kSubBins);
      const double sum = part.sum();
      if (sum > 0.0) part /= sum;
    }
    const double total = h.sum();
    if (!(total > 0.0)) continue;
    out.keypoints.push_back(points[i]);
    out.normals.push_back(normals[i]);
    out.descriptors.push_back(h / total);
  }
  return out;
}

FeatureSet extract_features(const PointCloud& cloud, const FeatureConfig& config) {
  if (cloud.size() < config.min_points) throw DataError("degenerate scan");
  // Thin trunks leave too few voxels for stable PCA, so normals come from
  // the raw scan and are averaged per voxel.
  PointCloud full = cloud;
  if (!full.has_normals()) {
    const KdIndex index(full.points);
    full.normals = estimate_normals(index, config.normal_neighbors, full.sensor_origin);
  }
  PointCloud down = voxel_downsample(full, config.voxel);
  if (down.size() < 3) throw DataError("degenerate scan");
  for (std::size_t i = 0; i < down.size(); ++i) {
    down.normals[i] = orient(down.normals[i], cloud.sensor_origin - down.points[i]);
  }
  std::vector<bool> keypoint(down.size());
  for (std::size_t i = 0; i < down.size(); ++i) {
    const double range = (down.points[i] - cloud.sensor_origin).head<2>().norm();
    keypoint[i] = range <= config.keypoint_range && std::abs(down.normals[i].z()) <= config.max_normal_z;
  }
  return compute_fpfh(down.points, down.normals, config.feature_radius, keypoint);
}

CorrespondenceSet match_features(const FeatureSet& query, const FeatureSet& ref, double ratio) {
  CorrespondenceSet out;
  const auto nq = static_cast<Eigen::Index>(query.size());
  const auto nr = static_cast<Eigen::Index>(ref.size());
  if (nq == 0 || nr == 0) return out;

  Eigen::MatrixXd q(kFpfhBins, nq);
  Eigen::MatrixXd r(kFpfhBins, nr);
  for (Eigen::Index i = 0; i < nq; ++i) q.col(i) = query.descriptors[i];
  for (Eigen::Index j = 0; j < nr; ++j) r.col(j) = ref.descriptors[j];
  const Eigen::VectorXd q2 = q.colwise().squaredNorm().transpose();
  const Eigen::RowVectorXd r2 = r.colwise().squaredNorm();

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> best(nq, kInf), second(nq, kInf);
  std::vector<Eigen::Index> best_ref(nq, -1);
  std::vector<double> col_best(nr, kInf);
  std::vector<Eigen::Index> col_best_query(nr, -1);

  constexpr Eigen::Index kBlock = 256;
  for (Eigen::Index start = 0; start < nq; start += kBlock) {
    const Eigen::Index rows = std::min(kBlock, nq - start);
    Eigen::MatrixXd d = -2.0 * q.middleCols(start, rows).transpose() * r;
    d.colwise() += q2.segment(start, rows);
    d.rowwise() += r2;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Eigen::Index qi = start + i;
      for (Eigen::Index j = 0; j < nr; ++j) {
        const double v = std::max(d(i, j), 0.0);
        if (v < best[qi]) {
          second[qi] = best[qi];
          best[qi] = v;
          best_ref[qi] = j;
        } else if (v < second[qi]) {
          second[qi] = v;
        }
        if (v < col_best[j]) {
          col_best[j] = v;
          col_best_query[j] = qi;
        }
      }
    }
  }

  const double ratio2 = ratio * ratio;
  for (Eigen::Index i = 0; i < nq; ++i) {
    const Eigen::Index j = best_ref[i];
    if (j < 0 || col_best_query[j] != i) continue;
    if (nr > 1 && !(best[i] <= ratio2 * second[i])) continue;
    // The expanded form above cancels badly near zero; report the direct distance.
    out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                   (query.descriptors[i] - ref.descriptors[j]).norm()});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Correspondence& a, const Correspondence& b) { return a.distance < b.distance; });
  return out;
}

void write_features_csv(std::ostream& out, const FeatureSet& features) {
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Vec3& p = features.keypoints[i];
    out << p.x() << ',' << p.y() << ',' << p.z();
    for (int b = 0; b < kFpfhBins; ++b) out << ',' << features.descriptors[i](b);
    out << '\n';
  }
}

}  // namespace fpr
