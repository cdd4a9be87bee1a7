#include <sstream>

#include "fpr/error.hpp"
#include "fpr/tasks.hpp"
#include "support.hpp"

using namespace fpr;
using namespace fpr::test;

namespace {

constexpr NodeId kMission1 = 1000000;

// Three laps of a 5 m circle: it revisits every 21 s, inside the 30 s
// exclusion window, and again after 42 s, outside it.
struct Scenario {
  Trajectory traj;
  std::vector<NodeData> nodes;
};

const Scenario& circle() {
  static const Scenario s = [] {
    Scenario out;
    PathSpec path;
    path.shape = PathShape::kCircle;
    path.center = Vec2(3, -2);
    path.radius = 5.0;
    path.laps = 3.0;
    DriftModel drift;
    drift.seed = 3;
    out.traj = simulate_trajectory(dense_world(), path, drift);
    render_trajectory(dense_world(), SensorModel::xt32(), 5, out.traj);
    const auto backend = make_backend("scan_context");
    out.nodes = prepare_nodes(kMission1, 1, out.traj.timestamps, out.traj.odometry, out.traj.scans, *backend,
                              PipelineConfig{});
    return out;
  }();
  return s;
}

struct Run {
  std::vector<OnlineStepResult> steps;
  std::vector<LoopCandidate> flushed;
  MissionBundle bundle;
};

Run run_online(const CandidateHook& hook = {}) {
  OnlineSlam slam(PipelineConfig{}, 1, kMission1);
  if (hook) slam.set_fault_hook(hook);
  Run run;
  for (const NodeData& n : circle().nodes) run.steps.push_back(slam.step(n));
  run.flushed = slam.flush();
  run.bundle = std::move(slam).into_bundle("circle");
  return run;
}

const Run& clean_run() {
  static const Run run = run_online();
  return run;
}

std::string graph_text(const PoseGraph& g) {
  std::ostringstream out;
  g.save(out);
  return out.str();
}

std::vector<LoopCandidate> all_finished(const Run& run) {
  std::vector<LoopCandidate> out;
  for (const auto& s : run.steps) out.insert(out.end(), s.finished.begin(), s.finished.end());
  out.insert(out.end(), run.flushed.begin(), run.flushed.end());
  return out;
}

double time_of(NodeId id) { return circle().traj.timestamps[id - kMission1]; }

// The same mission under another id block, as if recorded twice.
MissionBundle relabeled(const MissionBundle& src, int mission, const std::string& name) {
  const NodeId shift = static_cast<NodeId>(mission - src.mission) * 1000000;
  MissionBundle out;
  out.name = name;
  out.mission = mission;
  out.db = DescriptorDatabase(src.db.dimension(), src.db.backend());
  for (const auto& [id, node] : src.graph.nodes()) {
    GraphNode n = node;
    n.id = id + shift;
    n.mission = mission;
    out.graph.add_node(n);
  }
  for (Factor f : src.graph.factors()) {
    f.a += shift;
    f.b += shift;
    out.graph.add_factor(f);
  }
  for (const auto& [id, data] : src.nodes) {
    NodeData d = data;
    d.id = id + shift;
    d.mission = mission;
    out.db.add_scan(d.id, d.descriptor);
    out.nodes.emplace(d.id, std::move(d));
  }
  return out;
}

NodeData live_copy(const NodeData& src, NodeId id, double timestamp, const Pose& odometry) {
  NodeData d = src;
  d.id = id;
  d.mission = 2;
  d.timestamp = timestamp;
  d.odometry = odometry;
  return d;
}

}  // namespace

TEST_SUITE("tasks") {
  TEST_CASE("no candidates inside the exclusion window") {
    const Run& run = clean_run();
    for (std::size_t k = 0; k < run.steps.size() && circle().traj.timestamps[k] < 30.0; ++k) {
      CHECK(run.steps[k].finished.empty());
      CHECK(run.steps[k].admitted.empty());
    }
    for (const LoopCandidate& c : all_finished(run)) CHECK(time_of(c.query) - time_of(c.ref) >= 30.0);
  }

  TEST_CASE("revisits close loops and every admitted loop is fully verified") {
    const Run& run = clean_run();
    std::size_t admitted = 0;
    for (const auto& s : run.steps) {
      for (const LoopCandidate& c : s.admitted) {
        ++admitted;
        CHECK(c.descriptor_stage.accepted);
        CHECK(c.coarse_stage.accepted);
        CHECK(c.icp_stage.accepted);
        CHECK(c.admission.accepted);
        REQUIRE(c.cycle.has_value());
        CHECK(c.cycle->pass);
      }
    }
    CHECK(admitted > 0);
    std::size_t loop_factors = 0;
    for (const Factor& f : run.bundle.graph.factors()) loop_factors += is_loop(f.kind);
    CHECK(loop_factors == admitted);
  }

  TEST_CASE("identical input gives an identical graph") {
    const Run again = run_online();
    CHECK(graph_text(again.bundle.graph) == graph_text(clean_run().bundle.graph));
  }

  TEST_CASE("a corrupted candidate is rejected and leaves no factor") {
    // Corrupt the first query that produced a coarse-accepted candidate.
    NodeId target = 0;
    for (const LoopCandidate& c : all_finished(clean_run())) {
      if (c.coarse.accepted) {
        target = c.query;
        break;
      }
    }
    REQUIRE(target != 0);
    int corrupted = 0;
    const Run run = run_online([&](LoopCandidate& c) {
      if (c.query != target) return;
      // Directions 120 degrees apart so that no two corrupted candidates agree.
      const double angle = 2.0 * std::numbers::pi * corrupted++ / 3.0;
      c.transform = Pose::from_translation(Vec3(0.5 * std::cos(angle), 0.5 * std::sin(angle), 0.0)) * c.transform;
      c.injected_fault = true;
    });
    REQUIRE(corrupted > 0);
    std::size_t seen = 0;
    for (const LoopCandidate& c : all_finished(run)) {
      if (!c.injected_fault) continue;
      ++seen;
      CHECK_FALSE(c.admitted());
      CHECK_FALSE(c.coarse_stage.accepted);
      const bool reason_ok = c.coarse_stage.reason == "cycle inconsistent" || c.coarse_stage.reason == "no cycle partner";
      CHECK(reason_ok);
      if (c.cycle) CHECK(c.cycle->residual.translation > 0.1);
    }
    CHECK(seen == static_cast<std::size_t>(corrupted));
    for (const Factor& f : run.bundle.graph.factors()) {
      if (is_loop(f.kind)) CHECK(f.b != target);
    }
  }

  TEST_CASE("out-of-order timestamps are an error") {
    OnlineSlam slam(PipelineConfig{}, 1, kMission1);
    slam.step(circle().nodes[0]);
    NodeData late = circle().nodes[1];
    late.timestamp = circle().nodes[0].timestamp;
    CHECK_THROWS_AS(slam.step(late), DataError);
    NodeData dup = circle().nodes[1];
    dup.id = circle().nodes[0].id;
    CHECK_THROWS_AS(slam.step(dup), DataError);
  }

  TEST_CASE("merging a mission with a copy of itself") {
    const MissionBundle& a = clean_run().bundle;
    const MissionBundle b = relabeled(a, 2, "copy");
    const MergeResult merged = merge_missions({a, b}, PipelineConfig{});
    REQUIRE_FALSE(merged.inter_loops.empty());
    std::size_t self_matches = 0;
    for (const LoopCandidate& c : merged.inter_loops) {
      if (c.query == c.ref + 1000000) {
        ++self_matches;
        CHECK(c.similarity == doctest::Approx(1.0).epsilon(1e-5));
      }
    }
    CHECK(self_matches > 0);
    double worst = 0.0;
    for (const auto& [id, node] : a.graph.nodes()) {
      worst = std::max(worst, translation_gap(merged.graph.node(id).pose, merged.graph.node(id + 1000000).pose));
    }
    CHECK(worst < 0.01);
    std::size_t priors = 0;
    for (const Factor& f : merged.graph.factors()) priors += f.kind == FactorKind::kPrior;
    CHECK(priors == 1);
  }

  TEST_CASE("a mission from elsewhere is unanchored") {
    const ForestWorld other = generate_world(ForestPreset::kSparse, 999);
    PathSpec path;
    path.shape = PathShape::kCircle;
    path.radius = 4.0;
    path.laps = 0.5;
    Trajectory t = simulate_trajectory(other, path, DriftModel::none());
    render_trajectory(other, SensorModel::xt32(), 1, t);
    OnlineSlam slam(PipelineConfig{}, 3, 3000000);
    for (std::size_t k = 0; k < t.size(); ++k) slam.step(t.timestamps[k], t.odometry[k], t.scans[k]);
    const MissionBundle far = std::move(slam).into_bundle("elsewhere");
    CHECK_THROWS_WITH_AS(merge_missions({clean_run().bundle, far}, PipelineConfig{}),
                         doctest::Contains("mission unanchored: elsewhere"), UnanchoredMissionError);
    CHECK_THROWS_AS(merge_missions({clean_run().bundle}, PipelineConfig{}), Error);
  }

  TEST_CASE("relocalizing on a map scan returns that node's pose") {
    const MissionBundle& map = clean_run().bundle;
    const auto backend = make_backend("scan_context");
    const PipelineConfig config;
    RelocState state;
    const std::size_t k = 40;
    const NodeData& m0 = map.nodes.at(kMission1 + k);
    const NodeData& m1 = map.nodes.at(kMission1 + k + 1);
    // Odometry in the map frame itself: consistent by construction.
    const Pose p0 = map.graph.node(m0.id).pose, p1 = map.graph.node(m1.id).pose;
    const RelocStepResult first = relocalize_step(state, map, live_copy(m0, 2000000, 5000.0, p0), config, *backend);
    CHECK_FALSE(first.fix.has_value());
    const RelocStepResult second = relocalize_step(state, map, live_copy(m1, 2000001, 5001.0, p1), config, *backend);
    REQUIRE(second.fix.has_value());
    CHECK(translation_gap(*second.fix, p1) < 1e-3);
    CHECK(pose_error(*second.fix, p1).rotation_deg < 0.01);
    CHECK(state.status == RelocState::Status::kTracking);

    // A 3 m odometry jump breaks the cycle against the last fix.
    const NodeData& m2 = map.nodes.at(kMission1 + k + 2);
    const Pose jumped = Pose::from_translation(Vec3(3, 0, 0)) * map.graph.node(m2.id).pose;
    const RelocStepResult teleport = relocalize_step(state, map, live_copy(m2, 2000002, 5002.0, jumped), config, *backend);
    CHECK_FALSE(teleport.fix.has_value());
    CHECK(state.status == RelocState::Status::kTracking);
    bool rejected_by_cycle = false;
    for (const LoopCandidate& c : teleport.trace) rejected_by_cycle |= c.coarse_stage.reason.starts_with("cycle inconsistent");
    CHECK(rejected_by_cycle);

    NodeData stale = live_copy(m2, 2000003, 5002.0, jumped);
    CHECK_THROWS_AS(relocalize_step(state, map, stale, config, *backend), DataError);
  }
}
