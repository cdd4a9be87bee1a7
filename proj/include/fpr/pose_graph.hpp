#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fpr/geometry.hpp"
#include "fpr/retrieval.hpp"

namespace fpr {

struct GraphNode {
  NodeId id = 0;
  Pose pose;
  int mission = 0;
  double timestamp = 0.0;  // seconds
  std::string scan;        // scan reference (file or key)
};

enum class FactorKind { kOdometry, kIntraLoop, kInterMissionLoop, kPrior };

std::string to_string(FactorKind kind);
FactorKind parse_factor_kind(const std::string& text);
inline bool is_loop(FactorKind kind) {
  return kind == FactorKind::kIntraLoop || kind == FactorKind::kInterMissionLoop;
}

/// Relative measurement rel(x_a, x_b) with its 6x6 information matrix
/// (translation first). Priors are unary: a == b, measurement is x_a.
struct Factor {
  FactorKind kind = FactorKind::kOdometry;
  NodeId a = 0;
  NodeId b = 0;
  Pose measurement;
  Mat6 information = Mat6::Identity();
};

/// diag(t, t, t, r, r, r).
Mat6 diagonal_information(double translation, double rotation);

struct NoiseModel {
  Mat6 odometry = diagonal_information(100.0, 400.0);
  Mat6 loop = diagonal_information(50.0, 200.0);
  Mat6 inter_mission = diagonal_information(50.0, 200.0);
  Mat6 prior = diagonal_information(1e6, 1e6);
};

/// Nodes keyed by id plus factors. Mutation is single-writer; optimize()
/// works on a copy so readers never see partial updates.
class PoseGraph {
 public:
  void add_node(GraphNode node);
  void add_factor(Factor factor);
  void set_pose(NodeId id, const Pose& pose);
  void remove_priors_except(int mission);

  bool has_node(NodeId id) const { return nodes_.contains(id); }
  const GraphNode& node(NodeId id) const;
  const std::map<NodeId, GraphNode>& nodes() const { return nodes_; }
  const std::vector<Factor>& factors() const { return factors_; }
  std::size_t size() const { return nodes_.size(); }

  /// Loop factors touching `id`.
  std::vector<const Factor*> loops_of(NodeId id) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static PoseGraph load(std::istream& in);
  static PoseGraph load(const std::filesystem::path& path);

 private:
  std::map<NodeId, GraphNode> nodes_;
  std::vector<Factor> factors_;
};

Vec6 factor_residual(const Factor& factor, const Pose& xa, const Pose& xb);
/// Jacobians of factor_residual with respect to right perturbations
/// x <- x exp(d) of each endpoint.
void factor_jacobians(const Factor& factor, const Pose& xa, const Pose& xb, Mat6& ja, Mat6& jb);

struct OptimizerConfig {
  int max_iterations = 100;
  double relative_tolerance = 1e-9;
  double initial_lambda = 1e-4;
  std::optional<double> huber_delta;  // robust loss on whitened residual norm, off by default
};

struct OptimizeResult {
  PoseGraph graph;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::vector<double> cost_history;  // after every accepted step
};

/// Levenberg-Marquardt on SE(3). Throws DataError for graphs without a
/// prior (gauge freedom), disconnected graphs and non-SPD information.
OptimizeResult optimize(const PoseGraph& graph, const OptimizerConfig& config = {});

double graph_cost(const PoseGraph& graph);

/// Density check for a verified loop between a and b: admitted unless either
/// endpoint already has a loop to a node within `radius` of the other endpoint.
bool admit_loop(const PoseGraph& graph, NodeId a, NodeId b, double radius = 2.0);

}  // namespace fpr
