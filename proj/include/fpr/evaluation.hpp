#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "fpr/retrieval.hpp"
#include "fpr/trace.hpp"

namespace fpr {

/// Best retrieval for one query: the top-1 database entry and whether it
/// lies within the ground-truth radius.
struct Top1Sample {
  NodeId query = 0;
  std::optional<NodeId> match;
  double score = 0.0;
  bool correct = false;         // top-1 is within the radius
  bool has_true_match = false;  // some eligible entry is within the radius
};

/// Each node queried against the earlier nodes outside the time exclusion
/// window, as in online operation.
std::vector<Top1Sample> top1_samples(const std::vector<std::vector<double>>& descriptors,
                                     std::span<const Vec3> positions, std::span<const double> timestamps,
                                     double exclusion_seconds, double gt_radius = 10.0);

struct PrRow {
  double threshold = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  double precision = 1.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct PrCurve {
  std::vector<PrRow> rows;  // descending threshold
  PrRow best;               // F1-max; ties go to the higher threshold
  std::size_t positives = 0;
};

/// Sweeps tau over the observed scores. A query counts as predicted when
/// its top-1 score is >= tau; recall is over queries that have a true match.
PrCurve pr_curve(std::span<const Top1Sample> samples);

void write_pr_csv(std::ostream& out, const PrCurve& curve);

/// All-pairs cosine similarity and the 0/1 ground-truth adjacency
/// (distance <= radius).
struct Heatmap {
  Eigen::MatrixXd similarity;
  Eigen::MatrixXi adjacency;
};

Heatmap descriptor_heatmap(const std::vector<std::vector<double>>& descriptors, std::span<const Vec3> positions,
                           double gt_radius = 10.0);
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m);
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXi& m);

/// Candidates that cleared each stage: retrieved, coarse-verified
/// (SGV, RANSAC and cycle check), ICP-accepted and admitted.
struct StageCounts {
  std::size_t descriptor = 0;
  std::size_t coarse = 0;
  std::size_t icp = 0;
  std::size_t admitted = 0;

  bool monotone() const { return descriptor >= coarse && coarse >= icp && icp >= admitted; }
};

struct LoopStats {
  double distance_bin = 1.0;
  double max_distance = 25.0;
  double angle_bin = 10.0;
  std::vector<StageCounts> by_distance;  // [k, k+1) m
  std::vector<StageCounts> by_angle;     // [10k, 10k+10) degrees
  StageCounts beyond_distance;           // pairs at or past max_distance
  std::size_t unlabeled = 0;             // records without ground truth
};

/// Bins records by ground-truth pair distance and relative yaw (or the full
/// 3D angle). Throws DataError for a record accepted at a later stage but
/// not at an earlier one.
LoopStats loop_stats(std::span<const TraceRecord> records, bool full_angle = false);

/// axis,lo,hi,descriptor,coarse,icp,admitted
void write_loop_stats_csv(std::ostream& out, const LoopStats& stats);

}  // namespace fpr
