#include "fpr/tasks.hpp"

#include <algorithm>
#include <sstream>

#include "fpr/error.hpp"
#include "fpr/kd_index.hpp"
#include "fpr/log.hpp"
#include "fpr/parallel.hpp"

namespace fpr {
namespace {

LoopCandidate make_candidate(const char* task, NodeId query, const RetrievalCandidate& hit, const TruthLookup& truth) {
  LoopCandidate c;
  c.task = task;
  c.query = query;
  c.ref = hit.node;
  c.similarity = hit.similarity;
  c.descriptor_stage = {true, true, "retrieved"};
  if (truth) c.truth = truth(hit.node, query);
  return c;
}

// SGV, then RANSAC. On success c.transform holds rel(ref, query).
bool run_coarse(LoopCandidate& c, const NodeData& query, const NodeData& ref, const PipelineConfig& config) {
  c.coarse_stage.reached = true;
  const CorrespondenceSet corr = match_features(query.features, ref.features, config.match_ratio);
  c.correspondences = corr.size();
  if (corr.size() < 3) {
    c.coarse.reason = "insufficient correspondences";
    c.coarse_stage.reason = c.coarse.reason;
    return false;
  }
  c.sgv_score = sgv_check(corr, query.features.keypoints, ref.features.keypoints, config.sgv_epsilon);
  c.coarse.sgv_score = c.sgv_score;
  if (c.sgv_score < config.sgv_min_score) {
    c.coarse_stage.reason = "sgv score too low";
    return false;
  }
  c.coarse = ransac_register(corr, query.features.keypoints, ref.features.keypoints, config.ransac);
  c.coarse.sgv_score = c.sgv_score;
  if (!c.coarse.accepted) {
    c.coarse_stage.reason = c.coarse.reason;
    return false;
  }
  c.transform = c.coarse.transform;
  return true;
}

bool run_icp(LoopCandidate& c, const NodeData& query, const NodeData& ref, const PipelineConfig& config) {
  c.icp_stage.reached = true;
  try {
    c.icp = icp_refine(query.cloud, ref.cloud, c.transform, config.icp);
  } catch (const DataError& e) {
    c.icp_stage.reason = e.what();
    return false;
  }
  c.icp_stage.reason = c.icp->reason;
  if (!c.icp->accepted) return false;
  c.icp_stage.accepted = true;
  c.transform = c.icp->transform;
  return true;
}

void accept_coarse(LoopCandidate& c) {
  c.coarse_stage.accepted = true;
  c.coarse_stage.reason = "accepted";
}

std::string describe(const LoopCandidate& c) {
  std::ostringstream s;
  s << c.task << " loop " << c.ref << " <- " << c.query << " (similarity " << c.similarity << ")";
  return s.str();
}

}  // namespace

NodeData prepare_node(NodeId id, int mission, double timestamp, const Pose& odometry, const PointCloud& scan,
                      const DescriptorBackend& backend, const PipelineConfig& config) {
  NodeData n;
  n.id = id;
  n.mission = mission;
  n.timestamp = timestamp;
  n.odometry = odometry;
  n.descriptor = backend.describe(scan);
  PointCloud full = scan;
  if (!full.has_normals() && !full.empty()) {
    const KdIndex index(full.points);
    full.normals = estimate_normals(index, config.features.normal_neighbors, full.sensor_origin);
  }
  try {
    n.features = extract_features(full, config.features);
  } catch (const DataError& e) {
    log::warn("node " + std::to_string(id) + ": " + e.what() + ", no local features");
  }
  n.cloud = voxel_downsample(full, config.icp_voxel);
  return n;
}

std::vector<NodeData> prepare_nodes(NodeId first_id, int mission, const std::vector<double>& timestamps,
                                    const std::vector<Pose>& odometry, const std::vector<PointCloud>& scans,
                                    const DescriptorBackend& backend, const PipelineConfig& config,
                                    unsigned threads) {
  if (timestamps.size() != odometry.size() || odometry.size() != scans.size()) {
    throw DataError("timestamps, odometry and scans differ in length");
  }
  std::vector<NodeData> out(scans.size());
  parallel_for(scans.size(), threads, [&](std::size_t k) {
    out[k] = prepare_node(first_id + k, mission, timestamps[k], odometry[k], scans[k], backend, config);
  });
  return out;
}

OnlineSlam::OnlineSlam(PipelineConfig config, int mission, NodeId first_id)
    : config_(std::move(config)), backend_(make_backend(config_.backend)), mission_(mission), next_id_(first_id) {
  db_ = DescriptorDatabase(backend_->dimension(), backend_->tag());
}

OnlineStepResult OnlineSlam::step(double timestamp, const Pose& odometry, const PointCloud& scan) {
  return step(prepare_node(next_id_, mission_, timestamp, odometry, scan, *backend_, config_));
}

OnlineStepResult OnlineSlam::step(NodeData node) {
  if (!nodes_.empty() && !(node.timestamp > nodes_.rbegin()->second.timestamp)) {
    throw DataError("online: timestamps must be strictly increasing");
  }
  if (nodes_.contains(node.id)) throw DataError("online: duplicate node id " + std::to_string(node.id));
  const NodeId id = node.id;
  next_id_ = id + 1;
  OnlineStepResult out;
  out.node = id;

  // Graph: dead-reckon from the latest estimate, odometry factor, prior on the first node.
  GraphNode gn;
  gn.id = id;
  gn.mission = mission_;
  gn.timestamp = node.timestamp;
  if (nodes_.empty()) {
    gn.pose = node.odometry;
    graph_.add_node(gn);
    graph_.add_factor({FactorKind::kPrior, id, id, node.odometry, config_.noise.prior});
  } else {
    const NodeData& prev = nodes_.rbegin()->second;
    const Pose delta = relative(prev.odometry, node.odometry);
    gn.pose = graph_.node(prev.id).pose * delta;
    graph_.add_node(gn);
    graph_.add_factor({FactorKind::kOdometry, prev.id, id, delta, config_.noise.odometry});
  }

  // Step 1: retrieval over earlier keyframes.
  RetrievalQuery request;
  request.k = config_.top_k;
  request.tau_s = config_.tau_s;
  request.exclusion = ExclusionWindow{id, node.timestamp, config_.exclusion_seconds, config_.exclusion_nodes,
                                      [this](NodeId n) { return nodes_.at(n).timestamp; }};
  request.spatial = SpatialPrior{graph_.node(id).pose.translation(), config_.spatial_radius,
                                 [this](NodeId n) { return graph_.node(n).pose.translation(); }};
  const RetrievalResult hits = query(db_, node.descriptor, request);
  db_.add_scan(id, node.descriptor);
  const double now = node.timestamp;
  const NodeData& current = nodes_.emplace(id, std::move(node)).first->second;

  std::vector<LoopCandidate> verified;
  for (const RetrievalCandidate& hit : hits.candidates) {
    LoopCandidate c = make_candidate("online", id, hit, truth_);
    if (!run_coarse(c, current, nodes_.at(hit.node), config_)) {
      out.finished.push_back(std::move(c));
      continue;
    }
    if (hook_) hook_(c);

    // Step 2 cycle check: pair with a held candidate from a recent keyframe
    // that matched nearby reference nodes.
    bool passed = false;
    for (Held& h : held_) {
      LoopCandidate& p = h.candidate;
      const auto dq = static_cast<long long>(c.query) - static_cast<long long>(p.query);
      const auto dr = static_cast<long long>(c.ref) - static_cast<long long>(p.ref);
      // The partner may share the query node when it matched a different
      // reference node: the two registrations are still independent.
      if (dq < 0 || dq > config_.cycle_partner_gap || std::llabs(dr) > config_.cycle_partner_gap) continue;
      if (dq == 0 && dr == 0) continue;
      const Pose ref_step = relative(nodes_.at(p.ref).odometry, nodes_.at(c.ref).odometry);
      const Pose query_step = relative(nodes_.at(c.query).odometry, nodes_.at(p.query).odometry);
      const CycleCheck check =
          cycle_check(CycleQuad::online(ref_step, c.transform, query_step, p.transform), config_.cycle);
      if (!c.cycle || check.residual.translation < c.cycle->residual.translation) c.cycle = check;
      if (!check.pass) continue;
      c.cycle = check;
      c.partner = std::make_pair(p.query, p.ref);
      if (!p.coarse_stage.accepted) {
        p.cycle = check;
        p.partner = std::make_pair(c.query, c.ref);
        accept_coarse(p);
        verified.push_back(p);
      }
      passed = true;
      break;
    }
    if (passed) accept_coarse(c);
    held_.push_back({c, now});
    if (passed) verified.push_back(std::move(c));
  }

  // Step 3 and admission.
  for (LoopCandidate& c : verified) {
    if (!run_icp(c, nodes_.at(c.query), nodes_.at(c.ref), config_)) {
      out.finished.push_back(std::move(c));
      continue;
    }
    c.admission.reached = true;
    if (!admit_loop(graph_, c.ref, c.query, config_.density_radius)) {
      c.admission.reason = "dense region";
      out.finished.push_back(std::move(c));
      continue;
    }
    c.admission.accepted = true;
    c.admission.reason = "admitted";
    graph_.add_factor({FactorKind::kIntraLoop, c.ref, c.query, c.transform, config_.noise.loop});
    graph_ = optimize(graph_, config_.optimizer).graph;
    out.optimized = true;
    ++loops_;
    log::info("admitted " + describe(c));
    out.admitted.push_back(c);
    out.finished.push_back(std::move(c));
  }

  for (LoopCandidate& c : expire(now)) out.finished.push_back(std::move(c));
  return out;
}

std::vector<LoopCandidate> OnlineSlam::expire(double now) {
  std::vector<LoopCandidate> out;
  std::vector<Held> keep;
  for (Held& h : held_) {
    if (now - h.time <= config_.cycle_hold_seconds) {
      keep.push_back(std::move(h));
      continue;
    }
    if (h.candidate.coarse_stage.accepted) continue;  // already final
    LoopCandidate& c = h.candidate;
    c.coarse_stage.reason = c.cycle ? "cycle inconsistent" : "no cycle partner";
    out.push_back(std::move(c));
  }
  held_ = std::move(keep);
  return out;
}

std::vector<LoopCandidate> OnlineSlam::flush() {
  return expire(std::numeric_limits<double>::infinity());
}

MissionBundle OnlineSlam::into_bundle(std::string name) && {
  MissionBundle b;
  b.name = std::move(name);
  b.mission = mission_;
  b.graph = std::move(graph_);
  b.nodes = std::move(nodes_);
  b.db = std::move(db_);
  return b;
}

MissionBundle build_mission(const std::string& name, int mission, const std::vector<double>& timestamps,
                            const std::vector<Pose>& odometry, const std::vector<PointCloud>& scans,
                            const PipelineConfig& config, std::vector<LoopCandidate>* trace) {
  const auto first = static_cast<NodeId>(mission) * 1'000'000;
  OnlineSlam slam(config, mission, first);
  for (NodeData& node : prepare_nodes(first, mission, timestamps, odometry, scans, slam.backend(), config)) {
    OnlineStepResult r = slam.step(std::move(node));
    if (trace) trace->insert(trace->end(), r.finished.begin(), r.finished.end());
  }
  std::vector<LoopCandidate> rest = slam.flush();
  if (trace) trace->insert(trace->end(), rest.begin(), rest.end());
  return std::move(slam).into_bundle(name);
}

MergeResult merge_missions(const std::vector<MissionBundle>& bundles, const PipelineConfig& config,
                           const TruthLookup& truth, const CandidateHook& hook) {
  if (bundles.size() < 2) throw DataError("merge needs at least two missions");
  MergeResult out;
  const MissionBundle& first = bundles.front();
  out.graph = first.graph;
  out.alignment[first.name] = Pose::identity();
  DescriptorDatabase union_db = first.db;
  std::map<NodeId, const NodeData*> union_nodes;
  for (const auto& [id, n] : first.nodes) union_nodes[id] = &n;

  for (std::size_t m = 1; m < bundles.size(); ++m) {
    const MissionBundle& joining = bundles[m];
    if (union_db.dimension() != joining.db.dimension() || union_db.backend() != joining.db.backend()) {
      throw DataError("mission " + joining.name + " uses a different descriptor backend");
    }

    // Every node of the joining mission against the union (no gates: frames are unaligned).
    std::vector<LoopCandidate> coarse_ok;
    for (const auto& [qid, qnode] : joining.nodes) {
      RetrievalQuery request;
      request.k = config.top_k;
      request.tau_s = config.tau_s;
      for (const RetrievalCandidate& hit : query(union_db, qnode.descriptor, request).candidates) {
        LoopCandidate c = make_candidate("merge", qid, hit, truth);
        if (!run_coarse(c, qnode, *union_nodes.at(hit.node), config)) {
          out.trace.push_back(std::move(c));
          continue;
        }
        if (hook) hook(c);
        coarse_ok.push_back(std::move(c));
      }
    }

    // Cycle check over pairs of inter-mission candidates: i, j in the
    // union, k, l in the joining mission.
    for (std::size_t a = 0; a < coarse_ok.size(); ++a) {
      for (std::size_t b = 0; b < coarse_ok.size(); ++b) {
        LoopCandidate& ca = coarse_ok[a];
        const LoopCandidate& cb = coarse_ok[b];
        if (a == b || ca.coarse_stage.accepted) continue;
        const auto gap = static_cast<long long>(cb.query) - static_cast<long long>(ca.query);
        if (gap == 0 || std::llabs(gap) > config.merge_partner_gap) continue;
        if (union_nodes.at(ca.ref)->mission != union_nodes.at(cb.ref)->mission) continue;
        const Pose ij = relative(out.graph.node(ca.ref).pose, out.graph.node(cb.ref).pose);
        const Pose kl = relative(joining.graph.node(ca.query).pose, joining.graph.node(cb.query).pose);
        const CycleCheck check = cycle_check(CycleQuad::multi_mission(ij, cb.transform, kl, ca.transform), config.cycle);
        if (!ca.cycle || check.residual.translation < ca.cycle->residual.translation) ca.cycle = check;
        if (!check.pass) continue;
        ca.cycle = check;
        ca.partner = std::make_pair(cb.query, cb.ref);
        accept_coarse(ca);
      }
    }

    std::vector<LoopCandidate> verified;
    for (LoopCandidate& c : coarse_ok) {
      if (!c.coarse_stage.accepted) {
        c.coarse_stage.reason = c.cycle ? "cycle inconsistent" : "no cycle partner";
        out.trace.push_back(std::move(c));
        continue;
      }
      if (!run_icp(c, joining.nodes.at(c.query), *union_nodes.at(c.ref), config)) {
        out.trace.push_back(std::move(c));
        continue;
      }
      verified.push_back(std::move(c));
    }
    if (verified.empty()) throw UnanchoredMissionError(joining.name);

    // Bring the joining mission into the merged frame using its first verified loop.
    const LoopCandidate& anchor = verified.front();
    const Pose align = out.graph.node(anchor.ref).pose * anchor.transform * joining.graph.node(anchor.query).pose.inverse();
    out.alignment[joining.name] = align;
    for (const auto& [id, n] : joining.graph.nodes()) {
      GraphNode moved = n;
      moved.pose = align * n.pose;
      out.graph.add_node(std::move(moved));
    }
    for (const Factor& f : joining.graph.factors()) {
      if (f.kind != FactorKind::kPrior) out.graph.add_factor(f);
    }

    for (LoopCandidate& c : verified) {
      c.admission.reached = true;
      if (!admit_loop(out.graph, c.ref, c.query, config.density_radius)) {
        c.admission.reason = "dense region";
      } else {
        c.admission.accepted = true;
        c.admission.reason = "admitted";
        out.graph.add_factor({FactorKind::kInterMissionLoop, c.ref, c.query, c.transform, config.noise.inter_mission});
        out.inter_loops.push_back(c);
        log::info("admitted " + describe(c));
      }
      out.trace.push_back(std::move(c));
    }
    out.graph = optimize(out.graph, config.optimizer).graph;

    for (const auto& [id, n] : joining.nodes) {
      union_db.add_scan(id, n.descriptor);
      union_nodes[id] = &n;
    }
  }
  return out;
}

RelocStepResult relocalize_step(RelocState& state, const MissionBundle& map, const NodeData& live,
                                const PipelineConfig& config, const DescriptorBackend& backend,
                                const CandidateHook& hook) {
  if (state.last_time && !(live.timestamp > *state.last_time)) {
    throw DataError("relocalization: timestamps must be strictly increasing");
  }
  if (map.db.dimension() != backend.dimension()) throw DataError("relocalization: map uses a different descriptor");
  state.last_time = live.timestamp;
  RelocStepResult out;
  const bool tracking = state.status == RelocState::Status::kTracking;

  RetrievalQuery request;
  request.k = config.top_k;
  request.tau_s = config.tau_s;
  const RetrievalResult hits = query(map.db, live.descriptor, request);

  std::optional<Pose> bootstrap_seed;
  for (const RetrievalCandidate& hit : hits.candidates) {
    LoopCandidate c = make_candidate("reloc", live.id, hit, {});
    const NodeData& ref = map.nodes.at(hit.node);
    const Pose& map_node = map.graph.node(hit.node).pose;
    if (!run_coarse(c, live, ref, config)) {
      out.trace.push_back(std::move(c));
      continue;
    }
    if (hook) hook(c);
    const Pose tentative = map_node * c.transform;

    if (tracking) {
      c.cycle = cycle_check(CycleQuad::relocalization(tentative, *state.map_base, *state.odom_base, live.odometry),
                            config.cycle);
      if (!c.cycle->pass) {
        c.coarse_stage.reason = "cycle inconsistent";
        out.trace.push_back(std::move(c));
        continue;
      }
    } else {
      // Lost: two consecutive candidates must agree once odometry is accounted for.
      if (!bootstrap_seed) bootstrap_seed = tentative;
      if (!state.pending_map_base) {
        c.coarse_stage.reason = "awaiting bootstrap partner";
        out.trace.push_back(std::move(c));
        continue;
      }
      const Pose predicted = *state.pending_map_base * relative(*state.pending_odom_base, live.odometry);
      const PoseError e = pose_error(predicted, tentative);
      c.cycle = CycleCheck{e.translation <= config.bootstrap_translation && e.rotation_deg <= config.bootstrap_rotation_deg, e};
      if (!c.cycle->pass) {
        c.coarse_stage.reason = "bootstrap disagreement";
        out.trace.push_back(std::move(c));
        continue;
      }
    }
    accept_coarse(c);

    if (!run_icp(c, live, ref, config)) {
      out.trace.push_back(std::move(c));
      continue;
    }
    const Pose fix = map_node * c.transform;
    std::optional<CycleCheck> consistency;
    if (tracking) {
      consistency = cycle_check(CycleQuad::relocalization(fix, *state.map_base, *state.odom_base, live.odometry),
                                config.cycle);
      if (!consistency->pass) {
        c.admission = {true, false, "cycle inconsistent after icp"};
        out.trace.push_back(std::move(c));
        continue;
      }
    }
    c.admission = {true, true, "fix"};
    out.trace.push_back(std::move(c));
    out.fix = fix;
    out.consistency = consistency;
    state.status = RelocState::Status::kTracking;
    state.map_base = fix;
    state.odom_base = live.odometry;
    state.failures = 0;
    state.pending_map_base.reset();
    state.pending_odom_base.reset();
    return out;
  }

  if (tracking) {
    if (++state.failures >= config.lost_after_failures) {
      state.status = RelocState::Status::kLost;
      state.failures = 0;
      log::info("relocalization lost after repeated failures");
    }
  } else {
    state.pending_map_base = bootstrap_seed;
    state.pending_odom_base = bootstrap_seed ? std::optional<Pose>(live.odometry) : std::nullopt;
  }
  return out;
}

}  // namespace fpr
