#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fpr/coarse_registration.hpp"
#include "fpr/features.hpp"
#include "fpr/geometry.hpp"
#include "fpr/icp.hpp"
#include "fpr/pose_graph.hpp"
#include "fpr/retrieval.hpp"

namespace fpr {

/// Every knob of the three-stage pipeline and the task orchestrators.
struct PipelineConfig {
  // Step 1: retrieval.
  std::string backend = "scan_context";
  std::size_t top_k = 3;
  double tau_s = 0.3;
  double exclusion_seconds = 30.0;
  std::uint64_t exclusion_nodes = 0;
  double spatial_radius = 20.0;

  // Step 2: coarse registration and cycle consistency.
  FeatureConfig features;
  double match_ratio = 0.9;
  RansacConfig ransac;
  double sgv_epsilon = 0.3;
  double sgv_min_score = 0.2;
  CycleTolerance cycle;
  int cycle_partner_gap = 2;          // online: max node gap between paired candidates
  double cycle_hold_seconds = 10.0;   // online: unpaired candidates are dropped after this
  int merge_partner_gap = 5;          // merge: max node gap inside the joining mission

  // Step 3: fine registration.
  IcpConfig icp;
  double icp_voxel = 0.3;

  // Back end.
  double density_radius = 2.0;
  NoiseModel noise;
  OptimizerConfig optimizer;

  // Relocalization.
  double bootstrap_translation = 0.5;
  double bootstrap_rotation_deg = 5.0;
  int lost_after_failures = 5;
};

/// Everything the pipeline keeps per keyframe.
struct NodeData {
  NodeId id = 0;
  int mission = 0;
  double timestamp = 0.0;
  Pose odometry;                   // T_OB in the mission's odometry frame
  std::vector<double> descriptor;  // unit global descriptor
  FeatureSet features;
  PointCloud cloud;                // downsampled scan with normals, for ICP
};

NodeData prepare_node(NodeId id, int mission, double timestamp, const Pose& odometry, const PointCloud& scan,
                      const DescriptorBackend& backend, const PipelineConfig& config);

/// prepare_node over a sequence (parallel across keyframes); keyframe k gets
/// id first_id + k.
std::vector<NodeData> prepare_nodes(NodeId first_id, int mission, const std::vector<double>& timestamps,
                                    const std::vector<Pose>& odometry, const std::vector<PointCloud>& scans,
                                    const DescriptorBackend& backend, const PipelineConfig& config,
                                    unsigned threads = 0);

/// Ground-truth annotation for traces: relative pose of `b` w.r.t. `a`.
using TruthLookup = std::function<std::optional<Pose>(NodeId a, NodeId b)>;

/// Per-candidate verification record. Each stage is either not reached,
/// accepted or rejected; the trace of an admitted loop has every stage
/// accepted.
struct StageVerdict {
  bool reached = false;
  bool accepted = false;
  std::string reason;
};

struct LoopCandidate {
  std::string task;
  NodeId query = 0;
  NodeId ref = 0;
  double similarity = 0.0;

  std::size_t correspondences = 0;
  double sgv_score = 0.0;
  CoarseResult coarse;
  std::optional<CycleCheck> cycle;
  std::optional<std::pair<NodeId, NodeId>> partner;  // (query, ref) of the cycle partner
  std::optional<IcpResult> icp;

  StageVerdict descriptor_stage;
  StageVerdict coarse_stage;  // SGV + RANSAC + cycle check
  StageVerdict icp_stage;
  StageVerdict admission;     // density check

  Pose transform;  // rel(ref, query): coarse, then ICP-refined
  std::optional<Pose> truth;
  bool injected_fault = false;

  bool admitted() const { return admission.accepted; }
};

/// Hook applied to every coarse-accepted candidate before its cycle check
/// (fault injection in tests and experiments).
using CandidateHook = std::function<void(LoopCandidate&)>;

struct OnlineStepResult {
  NodeId node = 0;
  std::vector<LoopCandidate> admitted;
  std::vector<LoopCandidate> finished;  // every candidate that reached a final verdict this step
  bool optimized = false;
};

/// One mission M_i: its graph (odometry and intra-mission loops), keyframe
/// data and descriptor database.
struct MissionBundle {
  std::string name;
  int mission = 0;
  PoseGraph graph;
  std::map<NodeId, NodeData> nodes;
  DescriptorDatabase db;
};

/// Task A: incremental pose-graph SLAM with verified loop closures.
class OnlineSlam {
 public:
  explicit OnlineSlam(PipelineConfig config, int mission = 1, NodeId first_id = 0);

  /// Adds the keyframe, retrieves and verifies loop candidates against
  /// earlier keyframes and optimizes after every admitted loop. Throws
  /// DataError when timestamps are not strictly increasing.
  OnlineStepResult step(double timestamp, const Pose& odometry, const PointCloud& scan);
  OnlineStepResult step(NodeData node);

  /// Final verdicts for candidates still waiting for a cycle partner.
  std::vector<LoopCandidate> flush();

  void set_fault_hook(CandidateHook hook) { hook_ = std::move(hook); }
  void set_truth(TruthLookup truth) { truth_ = std::move(truth); }

  const PoseGraph& graph() const { return graph_; }
  const DescriptorDatabase& database() const { return db_; }
  const std::map<NodeId, NodeData>& nodes() const { return nodes_; }
  const PipelineConfig& config() const { return config_; }
  const DescriptorBackend& backend() const { return *backend_; }
  std::size_t loop_count() const { return loops_; }

  /// Moves graph, keyframes and database into a bundle.
  MissionBundle into_bundle(std::string name) &&;

 private:
  struct Held {
    LoopCandidate candidate;
    double time = 0.0;
  };

  std::vector<LoopCandidate> expire(double now);

  PipelineConfig config_;
  std::unique_ptr<DescriptorBackend> backend_;
  int mission_;
  NodeId next_id_;
  PoseGraph graph_;
  DescriptorDatabase db_;
  std::map<NodeId, NodeData> nodes_;
  std::vector<Held> held_;
  CandidateHook hook_;
  TruthLookup truth_;
  std::size_t loops_ = 0;
};

/// Runs OnlineSlam over a recorded mission. Node ids are mission * 1e6 + k.
MissionBundle build_mission(const std::string& name, int mission, const std::vector<double>& timestamps,
                            const std::vector<Pose>& odometry, const std::vector<PointCloud>& scans,
                            const PipelineConfig& config, std::vector<LoopCandidate>* trace = nullptr);

struct MergeResult {
  PoseGraph graph;
  std::vector<LoopCandidate> inter_loops;  // admitted
  std::vector<LoopCandidate> trace;        // every candidate
  std::map<std::string, Pose> alignment;   // mission frame -> merged frame
};

/// Task B: chronological merge, each mission matched against the union of
/// the ones before it. Throws UnanchoredMissionError naming the first
/// mission without a verified inter-mission loop.
MergeResult merge_missions(const std::vector<MissionBundle>& bundles, const PipelineConfig& config,
                           const TruthLookup& truth = {}, const CandidateHook& hook = {});

/// Task C state: last successful fix and track status.
struct RelocState {
  enum class Status { kLost, kTracking };
  Status status = Status::kLost;
  std::optional<Pose> map_base;   // T_MB(t-1)
  std::optional<Pose> odom_base;  // T_OB(t-1)
  std::optional<double> last_time;
  int failures = 0;

  // Bootstrap candidate from the previous step while lost.
  std::optional<Pose> pending_map_base;
  std::optional<Pose> pending_odom_base;
};

struct RelocStepResult {
  std::optional<Pose> fix;  // T_MB(t)
  std::vector<LoopCandidate> trace;
  std::optional<CycleCheck> consistency;  // odometry cycle residual of the emitted fix, when checked
};

/// Task C: localize a live keyframe against a prior map. Throws DataError
/// when timestamps are not strictly increasing.
RelocStepResult relocalize_step(RelocState& state, const MissionBundle& map, const NodeData& live,
                                const PipelineConfig& config, const DescriptorBackend& backend,
                                const CandidateHook& hook = {});

}  // namespace fpr
