#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fpr/tasks.hpp"

namespace fpr {

/// One JSON-lines verification record, as read back by the stats tools.
struct TraceRecord {
  std::string task;
  NodeId query = 0;
  NodeId ref = 0;
  double similarity = 0.0;
  std::size_t correspondences = 0;
  double sgv_score = 0.0;
  double inlier_ratio = 0.0;
  std::optional<PoseError> cycle_residual;
  std::optional<double> icp_rmse;
  std::optional<double> icp_correction;
  StageVerdict descriptor_stage;
  StageVerdict coarse_stage;
  StageVerdict icp_stage;
  StageVerdict admission;
  std::optional<Pose> transform;  // set once the coarse step produced one
  std::optional<Pose> truth;
  bool injected_fault = false;
};

TraceRecord to_record(const LoopCandidate& candidate);

std::string to_json_line(const TraceRecord& record);
/// Throws DataError naming `line_number` when the line is not a valid record.
TraceRecord parse_json_line(const std::string& line, std::size_t line_number = 0);

void write_trace(std::ostream& out, const std::vector<LoopCandidate>& candidates);
void write_trace(const std::filesystem::path& path, const std::vector<LoopCandidate>& candidates);
/// Blank lines are skipped; errors carry the 1-based line number.
std::vector<TraceRecord> read_trace(std::istream& in);
std::vector<TraceRecord> read_trace(const std::filesystem::path& path);

}  // namespace fpr
