#include "fpr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "fpr/error.hpp"

namespace fpr {

std::vector<Top1Sample> top1_samples(const std::vector<std::vector<double>>& descriptors,
                                     std::span<const Vec3> positions, std::span<const double> timestamps,
                                     double exclusion_seconds, double gt_radius) {
  const std::size_t n = descriptors.size();
  if (positions.size() != n || timestamps.size() != n) {
    throw DataError("evaluation: descriptors, positions and timestamps differ in length");
  }
  std::vector<Top1Sample> out;
  if (n == 0) return out;
  DescriptorDatabase db(descriptors.front().size(), "eval");
  for (std::size_t i = 0; i < n; ++i) {
    // Nodes become eligible once they leave the exclusion window.
    RetrievalQuery request;
    request.k = 1;
    request.tau_s = -std::numeric_limits<double>::infinity();
    request.exclusion = ExclusionWindow{i, timestamps[i], exclusion_seconds, 0,
                                        [&](NodeId id) { return timestamps[id]; }};
    Top1Sample s;
    s.query = i;
    if (!db.empty()) {
      const RetrievalResult r = query(db, descriptors[i], request);
      if (!r.candidates.empty()) {
        s.match = r.candidates.front().node;
        s.score = r.candidates.front().similarity;
        s.correct = (positions[*s.match] - positions[i]).norm() <= gt_radius;
      }
      for (NodeId j : db.node_ids()) {
        if (timestamps[i] - timestamps[j] >= exclusion_seconds && (positions[j] - positions[i]).norm() <= gt_radius) {
          s.has_true_match = true;
          break;
        }
      }
    }
    if (s.match) out.push_back(s);
    db.add_scan(i, descriptors[i]);
  }
  return out;
}

PrCurve pr_curve(std::span<const Top1Sample> samples) {
  PrCurve curve;
  for (const Top1Sample& s : samples) curve.positives += s.has_true_match ? 1 : 0;
  std::vector<const Top1Sample*> order;
  for (const Top1Sample& s : samples) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const Top1Sample* a, const Top1Sample* b) { return a->score > b->score; });
  std::size_t tp = 0;
  std::size_t fp = 0;
  bool have_best = false;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (order[i]->correct ? tp : fp) += 1;
    if (i + 1 < order.size() && order[i + 1]->score == order[i]->score) continue;
    PrRow row;
    row.threshold = order[i]->score;
    row.true_positives = tp;
    row.false_positives = fp;
    row.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    row.recall = curve.positives > 0 ? static_cast<double>(tp) / static_cast<double>(curve.positives) : 0.0;
    row.f1 = row.precision + row.recall > 0.0 ? 2.0 * row.precision * row.recall / (row.precision + row.recall) : 0.0;
    curve.rows.push_back(row);
    if (!have_best || row.f1 > curve.best.f1) {
      curve.best = row;
      have_best = true;
    }
  }
  return curve;
}

void write_pr_csv(std::ostream& out, const PrCurve& curve) {
  out << "threshold,precision,recall,f1,tp,fp\n";
  out.precision(17);
  for (const PrRow& r : curve.rows) {
    out << r.threshold << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.true_positives << ','
        << r.false_positives << '\n';
  }
}

Heatmap descriptor_heatmap(const std::vector<std::vector<double>>& descriptors, std::span<const Vec3> positions,
                           double gt_radius) {
  const auto n = static_cast<Eigen::Index>(descriptors.size());
  if (static_cast<std::size_t>(n) != positions.size()) throw DataError("heatmap: descriptor and pose counts differ");
  Heatmap h;
  h.similarity.resize(n, n);
  h.adjacency.resize(n, n);
  if (n == 0) return h;
  const auto dim = static_cast<Eigen::Index>(descriptors.front().size());
  Eigen::MatrixXd d(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(descriptors[i].size()) != dim) throw DataError("heatmap: descriptor sizes differ");
    d.row(i) = Eigen::Map<const Eigen::RowVectorXd>(descriptors[i].data(), dim);
    const double norm = d.row(i).norm();
    if (norm > 0.0) d.row(i) /= norm;
  }
  h.similarity = d * d.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) h.adjacency(i, j) = (positions[i] - positions[j]).norm() <= gt_radius;
  }
  return h;
}

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m) {
  out.precision(9);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXi& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

LoopStats loop_stats(std::span<const TraceRecord> records, bool full_angle) {
  LoopStats stats;
  stats.by_distance.resize(static_cast<std::size_t>(std::ceil(stats.max_distance / stats.distance_bin)));
  stats.by_angle.resize(static_cast<std::size_t>(std::ceil(180.0 / stats.angle_bin)));
  for (const TraceRecord& r : records) {
    const bool stage[4] = {r.descriptor_stage.accepted, r.coarse_stage.accepted, r.icp_stage.accepted,
                           r.admission.accepted};
    for (int s = 1; s < 4; ++s) {
      if (stage[s] && !stage[s - 1]) {
        throw DataError("trace record " + std::to_string(r.ref) + " <- " + std::to_string(r.query) +
                        " skips a verification stage");
      }
    }
    if (!r.truth) {
      ++stats.unlabeled;
      continue;
    }
    auto add = [&](StageCounts& c) {
      c.descriptor += stage[0];
      c.coarse += stage[1];
      c.icp += stage[2];
      c.admitted += stage[3];
    };
    const double distance = r.truth->translation().norm();
    const auto bin = static_cast<std::size_t>(std::floor(distance / stats.distance_bin));
    add(bin < stats.by_distance.size() ? stats.by_distance[bin] : stats.beyond_distance);
    const double angle = full_angle ? rotation_angle(r.truth->rotation_matrix()) * 180.0 / std::numbers::pi
                                    : std::abs(r.truth->yaw()) * 180.0 / std::numbers::pi;
    const auto abin = std::min(static_cast<std::size_t>(std::floor(angle / stats.angle_bin)), stats.by_angle.size() - 1);
    add(stats.by_angle[abin]);
  }
  return stats;
}

void write_loop_stats_csv(std::ostream& out, const LoopStats& stats) {
  out << "axis,lo,hi,descriptor,coarse,icp,admitted\n";
  auto row = [&](const char* axis, double lo, double hi, const StageCounts& c) {
    out << axis << ',' << lo << ',' << hi << ',' << c.descriptor << ',' << c.coarse << ',' << c.icp << ','
        << c.admitted << '\n';
  };
  for (std::size_t i = 0; i < stats.by_distance.size(); ++i) {
    row("distance", i * stats.distance_bin, (i + 1) * stats.distance_bin, stats.by_distance[i]);
  }
  row("distance", stats.max_distance, std::numeric_limits<double>::infinity(), stats.beyond_distance);
  for (std::size_t i = 0; i < stats.by_angle.size(); ++i) {
    row("angle", i * stats.angle_bin, (i + 1) * stats.angle_bin, stats.by_angle[i]);
  }
}

}  // namespace fpr
