#include "fpr/scan_context.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "fpr/error.hpp"

namespace fpr {

ScDescriptor compute_scan_context(const PointCloud& cloud, const ScanContextConfig& config) {
  if (cloud.empty()) throw DataError("empty scan");
  if (config.rings < 1 || config.sectors < 1 || !(config.max_radius > 0.0)) {
    throw ConfigError("scan context: invalid geometry");
  }
  const int rings = config.rings;
  const int sectors = config.sectors;
  Eigen::MatrixXd height = Eigen::MatrixXd::Constant(rings, sectors, -std::numeric_limits<double>::infinity());
  const double sector_width = 2.0 * std::numbers::pi / sectors;

  for (const Vec3& p : cloud.points) {
    const Vec3 d = p - cloud.sensor_origin;
    const double r = std::hypot(d.x(), d.y());
    if (r > config.max_radius) continue;
    int ring = static_cast<int>(r / config.max_radius * rings);
    ring = std::min(ring, rings - 1);
    double az = std::atan2(d.y(), d.x());
    if (az < 0.0) az += 2.0 * std::numbers::pi;
    // Spinning sensors fire exactly on sector edges; snap those so a
    // whole-sector rotation cannot move them across the edge by rounding.
    double t = az / sector_width;
    if (std::abs(t - std::round(t)) < 1e-9) t = std::round(t);
    const int sector = static_cast<int>(t) % sectors;
    height(ring, sector) = std::max(height(ring, sector), d.z());
  }

  ScDescriptor out;
  out.matrix = Eigen::MatrixXd::Zero(rings, sectors);
  out.ring_key = Eigen::VectorXd::Zero(rings);
  for (int r = 0; r < rings; ++r) {
    int occupied = 0;
    for (int s = 0; s < sectors; ++s) {
      if (std::isfinite(height(r, s))) {
        out.matrix(r, s) = height(r, s);
        ++occupied;
      }
    }
    out.ring_key(r) = static_cast<double>(occupied) / sectors;
  }
  out.flat.resize(static_cast<Eigen::Index>(rings) * sectors);
  for (int r = 0; r < rings; ++r) {
    for (int s = 0; s < sectors; ++s) out.flat(r * sectors + s) = out.matrix(r, s);
  }
  const double norm = out.flat.norm();
  if (norm > 0.0) out.flat /= norm;
  return out;
}

Eigen::MatrixXd circshift_columns(const Eigen::MatrixXd& m, int shift) {
  const auto cols = static_cast<int>(m.cols());
  Eigen::MatrixXd out(m.rows(), m.cols());
  if (cols == 0) return out;
  shift = ((shift % cols) + cols) % cols;
  for (int c = 0; c < cols; ++c) out.col((c + shift) % cols) = m.col(c);
  return out;
}

double column_distance(const Eigen::MatrixXd& query, const Eigen::MatrixXd& ref, int shift) {
  const auto cols = static_cast<int>(query.cols());
  shift = ((shift % cols) + cols) % cols;
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < cols; ++c) {
    // Query column c lands on reference column c + shift.
    const auto qc = query.col(c);
    const auto rc = ref.col((c + shift) % cols);
    const double nq = qc.norm();
    const double nr = rc.norm();
    if (nq == 0.0 || nr == 0.0) continue;
    sum += 1.0 - qc.dot(rc) / (nq * nr);
    ++used;
  }
  return used == 0 ? 1.0 : sum / used;
}

ShiftMatch shift_match(const ScDescriptor& query, const ScDescriptor& ref) {
  if (query.matrix.rows() != ref.matrix.rows() || query.matrix.cols() != ref.matrix.cols()) {
    throw DataError("shift_match: descriptor dimensions differ");
  }
  const auto sectors = static_cast<int>(query.matrix.cols());
  const double width = 360.0 / sectors;
  ShiftMatch best;
  best.distance = std::numeric_limits<double>::infinity();
  // Visit shifts by increasing |yaw| so that strict improvement keeps the
  // smallest rotation among ties.
  for (int step = 0; step <= sectors / 2; ++step) {
    for (int sign : {1, -1}) {
      if (step == 0 && sign < 0) continue;
      if (2 * step == sectors && sign < 0) continue;
      const int shift = ((sign * step) % sectors + sectors) % sectors;
      const double d = column_distance(query.matrix, ref.matrix, shift);
      if (d < best.distance) {
        best.distance = d;
        best.shift = shift;
        best.yaw_deg = (2 * shift <= sectors ? shift : shift - sectors) * width;
      }
    }
  }
  best.distance = std::clamp(best.distance, 0.0, 2.0);
  return best;
}

namespace {

struct CellHash {
  std::size_t operator()(const std::pair<int, int>& c) const {
    return std::hash<long long>()((static_cast<long long>(c.first) << 32) ^ static_cast<unsigned>(c.second));
  }
};

using Grid = std::unordered_map<std::pair<int, int>, double, CellHash>;

Grid occupancy(const PointCloud& cloud, const Pose& pose, double cell) {
  // Only cells with vertical structure count: ground returns fill every
  // near cell and would pin the correlation peak at zero offset.
  constexpr double kMinExtent = 0.8;
  std::unordered_map<std::pair<int, int>, std::pair<double, double>, CellHash> extent;
  for (const Vec3& p : cloud.points) {
    const Vec3 q = pose * p;
    const std::pair<int, int> key{static_cast<int>(std::floor(q.x() / cell)),
                                  static_cast<int>(std::floor(q.y() / cell))};
    auto [it, fresh] = extent.try_emplace(key, q.z(), q.z());
    if (!fresh) {
      it->second.first = std::min(it->second.first, q.z());
      it->second.second = std::max(it->second.second, q.z());
    }
  }
  Grid grid;
  for (const auto& [key, range] : extent) {
    if (range.second - range.first >= kMinExtent) grid[key] = 1.0;
  }
  return grid;
}

}  // namespace

Pose coarse_from_scan_context(const PointCloud& query, const PointCloud& ref, const ShiftMatch& match,
                              const PlanarSearch& search) {
  const Pose rotation = Pose::from_yaw(match.yaw_deg * std::numbers::pi / 180.0);
  const Grid r = occupancy(ref, Pose::from_translation(-ref.sensor_origin), search.cell);
  const Grid qr = occupancy(query, rotation * Pose::from_translation(-query.sensor_origin), search.cell);
  const int range = static_cast<int>(std::ceil(search.extent / search.cell));
  double best_score = -1.0;
  int best_dx = 0;
  int best_dy = 0;
  for (int dx = -range; dx <= range; ++dx) {
    for (int dy = -range; dy <= range; ++dy) {
      double score = 0.0;
      for (const auto& [key, value] : qr) {
        const auto it = r.find({key.first + dx, key.second + dy});
        if (it != r.end()) score += value * it->second;
      }
      // Prefer the smallest offset on ties.
      if (score > best_score ||
          (score == best_score && dx * dx + dy * dy < best_dx * best_dx + best_dy * best_dy)) {
        best_score = score;
        best_dx = dx;
        best_dy = dy;
      }
    }
  }
  const Vec3 offset(best_dx * search.cell, best_dy * search.cell, 0.0);
  // query -> ref: remove query origin, rotate, shift, restore ref origin.
  return Pose::from_translation(ref.sensor_origin + offset) * rotation *
         Pose::from_translation(-query.sensor_origin);
}

void write_descriptor_csv(std::ostream& out, const ScDescriptor& d) {
  for (Eigen::Index r = 0; r < d.matrix.rows(); ++r) {
    for (Eigen::Index s = 0; s < d.matrix.cols(); ++s) {
      if (s > 0) out << ',';
      out << d.matrix(r, s);
    }
    out << '\n';
  }
}

}  // namespace fpr
