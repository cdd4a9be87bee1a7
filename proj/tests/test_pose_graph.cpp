#include <sstream>

#include "fpr/error.hpp"
#include "fpr/pose_graph.hpp"
#include "support.hpp"

using namespace fpr;
using namespace fpr::test;

namespace {

Pose rel(const Pose& a, const Pose& b) { return a.inverse() * b; }

Factor relative(FactorKind kind, NodeId a, NodeId b, const Pose& m, const NoiseModel& noise = {}) {
  const Mat6 info = kind == FactorKind::kOdometry ? noise.odometry : noise.loop;
  return {kind, a, b, m, info};
}

Factor prior(NodeId id, const Pose& p) { return {FactorKind::kPrior, id, id, p, NoiseModel{}.prior}; }

PoseGraph chain(const std::vector<Pose>& init, const std::vector<Pose>& measured_from) {
  PoseGraph g;
  for (std::size_t k = 0; k < init.size(); ++k) g.add_node({k, init[k], 1, static_cast<double>(k), ""});
  g.add_factor(prior(0, measured_from[0]));
  for (std::size_t k = 1; k < init.size(); ++k) {
    g.add_factor(relative(FactorKind::kOdometry, k - 1, k, rel(measured_from[k - 1], measured_from[k])));
  }
  return g;
}

double position_rmse(const PoseGraph& g, const std::vector<Pose>& truth) {
  double sum = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) sum += (g.node(k).pose.translation() - truth[k].translation()).squaredNorm();
  return std::sqrt(sum / static_cast<double>(truth.size()));
}

}  // namespace

TEST_SUITE("pose_graph") {
  TEST_CASE("exact odometry chain has zero cost and keeps dead reckoning") {
    Rng rng(90);
    std::vector<Pose> truth{Pose()};
    for (int k = 1; k < 30; ++k) truth.push_back(truth.back() * random_pose(rng, 1.0));
    const PoseGraph g = chain(truth, truth);
    CHECK(graph_cost(g) < 1e-18);
    const OptimizeResult r = optimize(g);
    CHECK(r.final_cost < 1e-18);
    for (std::size_t k = 0; k < truth.size(); ++k) CHECK(translation_gap(r.graph.node(k).pose, truth[k]) < 1e-9);
  }

  TEST_CASE("square with a loop recovers from a perturbed start") {
    Rng rng(91);
    const std::vector<Pose> truth{Pose(), Pose::from_yaw(std::numbers::pi / 2, Vec3(10, 0, 0)),
                                  Pose::from_yaw(std::numbers::pi, Vec3(10, 10, 0)),
                                  Pose::from_yaw(-std::numbers::pi / 2, Vec3(0, 10, 0))};
    std::vector<Pose> init;
    for (const Pose& p : truth) init.push_back(p * Pose::from_yaw(rng.uniform(-0.1, 0.1), Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0)));
    init[0] = truth[0];
    PoseGraph g = chain(init, truth);
    g.add_factor(relative(FactorKind::kIntraLoop, 3, 0, rel(truth[3], truth[0])));
    const OptimizeResult r = optimize(g);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(translation_gap(r.graph.node(k).pose, truth[k]) < 1e-6);
      CHECK(pose_error(r.graph.node(k).pose, truth[k]).rotation_deg < 1e-6);
    }
    CHECK(r.final_cost <= r.initial_cost);
  }

  TEST_CASE("loops on a noisy circle halve the trajectory error") {
    Rng rng(92);
    constexpr int kNodes = 200;
    std::vector<Pose> truth;
    for (int k = 0; k < kNodes; ++k) {
      const double a = 2.0 * std::numbers::pi * k / kNodes;
      truth.push_back(Pose::from_yaw(a + std::numbers::pi / 2, Vec3(30 * std::cos(a), 30 * std::sin(a), 0)));
    }
    std::vector<Pose> odometry{truth[0]};
    std::vector<Pose> steps;
    for (int k = 1; k < kNodes; ++k) {
      const Pose noise = Pose::from_yaw(rng.normal(0, 0.5 * kDeg), Vec3(rng.normal(0, 0.05), rng.normal(0, 0.05), 0));
      steps.push_back(rel(truth[k - 1], truth[k]) * noise);
      odometry.push_back(odometry.back() * steps.back());
    }
    PoseGraph g;
    for (int k = 0; k < kNodes; ++k) g.add_node({static_cast<NodeId>(k), odometry[k], 1, 1.0 * k, ""});
    g.add_factor(prior(0, truth[0]));
    for (int k = 1; k < kNodes; ++k) g.add_factor(relative(FactorKind::kOdometry, k - 1, k, steps[k - 1]));
    for (int i = 0; i < 10; ++i) {
      const NodeId a = kNodes - 1 - 2 * i, b = 2 * i;
      const Pose noise = Pose::from_translation(Vec3(rng.normal(0, 0.02), rng.normal(0, 0.02), 0));
      g.add_factor(relative(FactorKind::kIntraLoop, a, b, rel(truth[a], truth[b]) * noise));
    }
    const double before = position_rmse(g, truth);
    const OptimizeResult r = optimize(g);
    const double after = position_rmse(r.graph, truth);
    MESSAGE("odometry rmse " << before << " m, optimized " << after << " m");
    CHECK(after <= 0.5 * before);
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
    CHECK(std::isfinite(r.final_cost));

    const OptimizeResult again = optimize(r.graph);
    CHECK(std::abs(again.final_cost - r.final_cost) < 1e-12);
  }

  TEST_CASE("analytic jacobians match central differences") {
    Rng rng(93);
    for (int trial = 0; trial < 50; ++trial) {
      for (FactorKind kind : {FactorKind::kOdometry, FactorKind::kIntraLoop}) {
        const Factor f = relative(kind, 0, 1, random_pose(rng, 3.0));
        const Pose xa = random_pose(rng, 5.0), xb = random_pose(rng, 5.0);
        Mat6 ja, jb;
        factor_jacobians(f, xa, xb, ja, jb);
        Mat6 na, nb;
        constexpr double h = 1e-6;
        for (int c = 0; c < 6; ++c) {
          Vec6 d = Vec6::Zero();
          d(c) = h;
          na.col(c) = (factor_residual(f, xa * se3_exp(d), xb) - factor_residual(f, xa * se3_exp(-d), xb)) / (2 * h);
          nb.col(c) = (factor_residual(f, xa, xb * se3_exp(d)) - factor_residual(f, xa, xb * se3_exp(-d))) / (2 * h);
        }
        CHECK((na - ja).norm() <= 1e-5 * std::max(1.0, ja.norm()));
        CHECK((nb - jb).norm() <= 1e-5 * std::max(1.0, jb.norm()));
      }
    }
  }

  TEST_CASE("residual is the log of the measurement error") {
    Rng rng(94);
    const Pose xa = random_pose(rng), xb = random_pose(rng), m = random_pose(rng, 2.0);
    const Factor f = relative(FactorKind::kOdometry, 0, 1, m);
    const Vec6 r = factor_residual(f, xa, xb);
    CHECK(pose_error(se3_exp(r), m.inverse() * xa.inverse() * xb).translation < 1e-9);
    CHECK(factor_residual(relative(FactorKind::kOdometry, 0, 1, rel(xa, xb)), xa, xb).norm() < 1e-9);
  }

  TEST_CASE("gauge, connectivity and information errors") {
    PoseGraph g;
    g.add_node({1, Pose(), 1, 0, ""});
    g.add_node({2, Pose::from_translation(Vec3(1, 0, 0)), 1, 1, ""});
    g.add_factor(relative(FactorKind::kOdometry, 1, 2, Pose::from_translation(Vec3(1, 0, 0))));
    CHECK_THROWS_WITH_AS(optimize(g), doctest::Contains("no prior"), DataError);

    g.add_factor(prior(1, Pose()));
    g.add_node({7, Pose(), 2, 0, ""});
    g.add_node({8, Pose(), 2, 1, ""});
    g.add_factor(relative(FactorKind::kOdometry, 7, 8, Pose()));
    CHECK_THROWS_WITH_AS(optimize(g), doctest::Contains("disconnected into 2 components"), DataError);

    PoseGraph bad;
    bad.add_node({1, Pose(), 1, 0, ""});
    bad.add_node({2, Pose(), 1, 1, ""});
    bad.add_factor(prior(1, Pose()));
    Factor f = relative(FactorKind::kOdometry, 1, 2, Pose());
    f.information(3, 3) = -1.0;
    bad.add_factor(f);
    CHECK_THROWS_WITH_AS(optimize(bad), doctest::Contains("positive definite"), DataError);

    CHECK_THROWS_AS(g.add_node({1, Pose(), 1, 0, ""}), DataError);
    CHECK_THROWS_AS(g.add_factor(relative(FactorKind::kOdometry, 1, 99, Pose())), DataError);
  }

  TEST_CASE("density check examples") {
    PoseGraph g;
    for (NodeId k = 0; k < 20; ++k) g.add_node({k, Pose::from_translation(Vec3(0.5 * k, 0, 0)), 1, 1.0 * k, ""});
    g.add_node({100, Pose::from_translation(Vec3(0, 30, 0)), 1, 100, ""});
    g.add_node({101, Pose::from_translation(Vec3(0.4, 30, 0)), 1, 101, ""});
    g.add_node({102, Pose::from_translation(Vec3(20, 30, 0)), 1, 102, ""});

    CHECK(admit_loop(g, 100, 0));
    g.add_factor(relative(FactorKind::kIntraLoop, 100, 0, Pose()));
    CHECK_FALSE(admit_loop(g, 100, 0));  // same endpoints
    CHECK_FALSE(admit_loop(g, 0, 100));
    CHECK(admit_loop(g, 102, 19));        // far from the existing loop

    // Five candidates near one reference: replayed in order, only the first goes in.
    PoseGraph h = g;
    int admitted = 0;
    for (NodeId ref : {10, 11, 12, 13, 14}) {
      if (admit_loop(h, 101, ref)) {
        h.add_factor(relative(FactorKind::kIntraLoop, 101, ref, Pose()));
        ++admitted;
      }
    }
    CHECK(admitted == 1);
  }

  TEST_CASE("save and load round trip") {
    Rng rng(95);
    PoseGraph g;
    for (NodeId k = 0; k < 5; ++k) g.add_node({1000000 + k, random_pose(rng), 1, 0.5 * k, "scans/" + std::to_string(k) + ".ply"});
    g.add_factor(prior(1000000, Pose()));
    g.add_factor(relative(FactorKind::kOdometry, 1000000, 1000001, random_pose(rng)));
    g.add_factor({FactorKind::kInterMissionLoop, 1000002, 1000004, random_pose(rng), NoiseModel{}.inter_mission});
    std::stringstream buf;
    g.save(buf);
    const PoseGraph back = PoseGraph::load(buf);
    REQUIRE(back.size() == g.size());
    REQUIRE(back.factors().size() == g.factors().size());
    for (const auto& [id, node] : g.nodes()) {
      CHECK(back.node(id).pose.translation() == node.pose.translation());
      CHECK(back.node(id).scan == node.scan);
      CHECK(back.node(id).timestamp == node.timestamp);
      CHECK(back.node(id).mission == node.mission);
    }
    for (std::size_t i = 0; i < g.factors().size(); ++i) {
      CHECK(back.factors()[i].kind == g.factors()[i].kind);
      CHECK(back.factors()[i].information == g.factors()[i].information);
      CHECK(back.factors()[i].measurement.rotation().coeffs() == g.factors()[i].measurement.rotation().coeffs());
    }
    std::stringstream junk("NODE x\n");
    CHECK_THROWS_WITH_AS(PoseGraph::load(junk), doctest::Contains("line 1"), DataError);
  }
}
