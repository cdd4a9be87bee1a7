#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fpr/geometry.hpp"

namespace fpr {

using NodeId = std::uint64_t;

/// Row-major matrix of unit descriptors, one row per pose-graph node.
///
/// Single writer (add_scan), any number of concurrent readers (query).
class DescriptorDatabase {
 public:
  DescriptorDatabase() = default;
  DescriptorDatabase(std::size_t dimension, std::string backend);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dimension() const { return dim_; }
  const std::string& backend() const { return backend_; }
  const std::vector<NodeId>& node_ids() const { return ids_; }
  bool contains(NodeId id) const { return row_of_.contains(id); }

  /// Appends a row. The descriptor is normalized if it is not already unit
  /// length; zero descriptors are rejected.
  void add_scan(NodeId id, std::span<const double> descriptor);

  std::span<const float> row(std::size_t index) const;
  std::span<const float> row_of(NodeId id) const;

  /// S = D d_q, in row order.
  std::vector<double> similarities(std::span<const double> query) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static DescriptorDatabase load(std::istream& in);
  static DescriptorDatabase load(const std::filesystem::path& path);

 private:
  std::size_t dim_ = 0;
  std::string backend_;
  std::vector<float> rows_;
  std::vector<NodeId> ids_;
  std::unordered_map<NodeId, std::size_t> row_of_;
};

/// Drop nodes recorded within the last `seconds` or `nodes` of the query.
struct ExclusionWindow {
  NodeId query_id = 0;
  double query_time = 0.0;
  double seconds = 30.0;
  std::uint64_t nodes = 0;  // 0 disables the node-count rule
  std::function<double(NodeId)> time_of;
};

/// Keep only nodes within `radius` of `position` (e.g. from odometry).
struct SpatialPrior {
  Vec3 position = Vec3::Zero();
  double radius = 20.0;
  std::function<Vec3(NodeId)> position_of;
};

struct RetrievalQuery {
  std::size_t k = 3;
  double tau_s = 0.0;
  std::optional<ExclusionWindow> exclusion;
  std::optional<SpatialPrior> spatial;
};

struct RetrievalCandidate {
  NodeId node = 0;
  double similarity = 0.0;
};

struct RetrievalResult {
  std::vector<RetrievalCandidate> candidates;  // descending similarity
  double threshold_used = 0.0;
};

/// Cosine-similarity retrieval: top-k rows with S_i >= tau_s after the
/// exclusion and spatial filters. Ties keep database order.
RetrievalResult query(const DescriptorDatabase& db, std::span<const double> descriptor,
                      const RetrievalQuery& request);

struct LabeledScore {
  double similarity = 0.0;
  bool is_true_pair = false;
};

struct ThresholdChoice {
  double tau_s = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Threshold among the observed scores maximizing F1 of the rule
/// "score >= tau"; ties go to the higher threshold.
ThresholdChoice select_threshold_f1max(std::span<const LabeledScore> scores);

/// Global descriptor plugin: scan -> unit vector, optionally with a coarse
/// relative pose of query w.r.t. reference derived from the descriptors.
class DescriptorBackend {
 public:
  virtual ~DescriptorBackend() = default;
  virtual std::string tag() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> describe(const PointCloud& cloud) const = 0;
  virtual std::optional<Pose> coarse_transform(const PointCloud& /*query*/, const PointCloud& /*ref*/) const {
    return std::nullopt;
  }
};

using BackendFactory = std::function<std::unique_ptr<DescriptorBackend>()>;

/// Registers a backend under its tag; "scan_context" is built in.
void register_backend(const std::string& tag, BackendFactory factory);
std::unique_ptr<DescriptorBackend> make_backend(const std::string& tag);
std::vector<std::string> backend_tags();

}  // namespace fpr
