#pragma once

#include <Eigen/Core>

#include <iosfwd>

#include "fpr/geometry.hpp"

namespace fpr {

struct ScanContextConfig {
  int rings = 20;
  int sectors = 60;
  double max_radius = 50.0;  // meters

  double sector_width_deg() const { return 360.0 / sectors; }
};

/// Bird's-eye polar height descriptor of a single scan.
struct ScDescriptor {
  Eigen::MatrixXd matrix;    // rings x sectors, max height per cell, 0 when empty
  Eigen::VectorXd ring_key;  // per-ring fraction of occupied sectors
  Eigen::VectorXd flat;      // row-major flattening, L2-normalized (zero if matrix is)
};

ScDescriptor compute_scan_context(const PointCloud& cloud, const ScanContextConfig& config = {});

struct ShiftMatch {
  double distance = 1.0;  // mean column cosine distance, [0, 2]
  double yaw_deg = 0.0;   // relative yaw of the query in the reference frame, (-180, 180]
  int shift = 0;          // columns, [0, sectors)
};

/// Best cyclic column alignment: shifting the query right by `shift`
/// columns lines it up with the reference.
ShiftMatch shift_match(const ScDescriptor& query, const ScDescriptor& ref);

/// Mean cosine distance between corresponding non-empty columns after
/// shifting `query` right by `shift` columns. 1 when no column pair is comparable.
double column_distance(const Eigen::MatrixXd& query, const Eigen::MatrixXd& ref, int shift);

/// Cyclic right shift of matrix columns.
Eigen::MatrixXd circshift_columns(const Eigen::MatrixXd& m, int shift);

/// Coarse relative pose for the descriptor-only path: the yaw from shift
/// matching followed by a planar translation found by correlating
/// bird's-eye occupancy grids.
struct PlanarSearch {
  double cell = 0.5;     // meters
  double extent = 10.0;  // +/- search range, meters
};
Pose coarse_from_scan_context(const PointCloud& query, const PointCloud& ref, const ShiftMatch& match,
                              const PlanarSearch& search = {});

/// One CSV row per ring.
void write_descriptor_csv(std::ostream& out, const ScDescriptor& d);

}  // namespace fpr
