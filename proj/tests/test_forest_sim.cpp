#include <sstream>

#include "fpr/error.hpp"
#include "support.hpp"

using namespace fpr;
using namespace fpr::test;

namespace {

std::string json_of(const ForestWorld& w) {
  std::ostringstream out;
  w.save_json(out);
  return out.str();
}

double min_pair_distance(const ForestWorld& w) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < w.trees.size(); ++i) {
    for (std::size_t j = i + 1; j < w.trees.size(); ++j) {
      best = std::min(best, (w.trees[i].position - w.trees[j].position).norm());
    }
  }
  return best;
}

double elevation_deg(const Vec3& p) { return std::atan2(p.z(), p.head<2>().norm()) / kDeg; }

}  // namespace

TEST_SUITE("forest_sim") {
  TEST_CASE("worlds are deterministic per seed") {
    const std::string a = json_of(generate_world(ForestPreset::kDense, 5));
    CHECK(a == json_of(generate_world(ForestPreset::kDense, 5)));
    CHECK(a != json_of(generate_world(ForestPreset::kDense, 6)));
    std::istringstream in(a);
    CHECK(json_of(ForestWorld::load_json(in)) == a);
  }

  TEST_CASE("preset densities and spacing") {
    for (std::uint64_t seed : {1, 2, 3}) {
      const ForestWorld dense = generate_world(ForestPreset::kDense, seed);
      CHECK(dense.area_ha() == doctest::Approx(1.0));
      CHECK(dense.trees.size() >= 400);
      CHECK(dense.trees.size() <= 700);
      CHECK(min_pair_distance(dense) >= dense.min_spacing);

      const ForestWorld sparse = generate_world(ForestPreset::kSparse, seed);
      CHECK(static_cast<double>(sparse.trees.size()) / sparse.area_ha() <= 150.0);
      CHECK(min_pair_distance(sparse) >= sparse.min_spacing);
      CHECK(sparse.terrain.is_flat());

      const ForestWorld hilly = generate_world(ForestPreset::kHilly, seed);
      REQUIRE_FALSE(hilly.terrain.is_flat());
      const auto [lo, hi] = std::minmax_element(hilly.terrain.heights.begin(), hilly.terrain.heights.end());
      CHECK(*lo >= hilly.terrain.base - 5.0 - 1e-9);
      CHECK(*hi <= hilly.terrain.base + 5.0 + 1e-9);
      CHECK(*hi - *lo >= 4.0);  // real relief, not a flat field
      CHECK(min_pair_distance(hilly) >= hilly.min_spacing);
    }
  }

  TEST_CASE("single tree ahead at ten meters") {
    ForestWorld w;
    w.min_corner = Vec2(-50, -50);
    w.max_corner = Vec2(50, 50);
    Tree t;
    t.position = Vec2(10, 0);
    t.radius = 0.25;
    t.height = 12.0;
    w.trees.push_back(t);
    const PointCloud scan = render_scan(w, quiet_xt32(), Pose::from_translation(Vec3(0, 0, 1)), 1);
    std::size_t hits = 0;
    for (const Vec3& p : scan.points) {
      if (p.z() < -0.99) continue;  // ground
      ++hits;
      const double range = p.head<2>().norm();
      CHECK(range >= 10.0 - t.radius - 1e-6);
      CHECK(range <= 10.0 + t.radius + 1e-6);
    }
    CHECK(hits > 20);
  }

  TEST_CASE("wide-FOV short-range sensor sees more near, less far") {
    const Pose pose = Pose::from_yaw(0.3, Vec3(2, 3, 1));
    const PointCloud xt = render_scan(dense_world(), SensorModel::xt32(), pose, 9);
    const PointCloud qt = render_scan(dense_world(), SensorModel::qt64(), pose, 9);
    auto count = [](const PointCloud& c, auto pred) {
      return std::count_if(c.points.begin(), c.points.end(), pred);
    };
    const auto steep = [](const Vec3& p) { return std::abs(elevation_deg(p)) > 15.5; };
    const auto far = [](const Vec3& p) { return p.norm() > 30.5; };
    CHECK(count(qt, steep) > count(xt, steep));
    CHECK(count(xt, far) > count(qt, far));
    CHECK(count(qt, far) == 0);
  }

  TEST_CASE("sensor presets and validation") {
    CHECK(SensorModel::xt32().max_range == 50.0);
    CHECK(SensorModel::xt32().vertical_fov_deg == 30.0);
    CHECK(SensorModel::qt64().max_range == 30.0);
    CHECK(SensorModel::qt64().vertical_fov_deg == 100.0);
    SensorModel bad = SensorModel::xt32();
    bad.vertical_fov_deg = 180.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("rendering is equivariant to the sensor frame") {
    const SensorModel sensor = quiet_xt32();
    Rng rng(100);
    for (int trial = 0; trial < 3; ++trial) {
      const Pose p = Pose::from_yaw(rng.uniform(-3, 3), Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), 1.0));
      const PointCloud direct = render_scan(dense_world(), sensor, p, 4);
      const PointCloud moved = render_scan(dense_world().transformed(p.inverse()), sensor, Pose(), 4);
      REQUIRE(direct.size() == moved.size());
      double worst = 0.0;
      for (std::size_t i = 0; i < direct.size(); ++i) worst = std::max(worst, (direct.points[i] - moved.points[i]).norm());
      CHECK(worst < 1e-6);
    }
  }

  TEST_CASE("rendering is deterministic per seed and noise is per ray") {
    const Pose p = Pose::from_translation(Vec3(1, 1, 1));
    const PointCloud a = render_scan(dense_world(), SensorModel::xt32(), p, 5);
    const PointCloud b = render_scan(dense_world(), SensorModel::xt32(), p, 5);
    CHECK(a.points == b.points);
    const PointCloud c = render_scan(dense_world(), SensorModel::xt32(), p, 6);
    CHECK(a.points != c.points);
  }

  TEST_CASE("zero drift leaves odometry on ground truth") {
    PathSpec path;
    const Trajectory t = simulate_trajectory(dense_world(), path, DriftModel::none());
    REQUIRE(t.size() > 10);
    for (std::size_t k = 0; k < t.size(); ++k) {
      CHECK(t.odometry[k].translation() == t.ground_truth[k].translation());
      CHECK(t.odometry[k].rotation().coeffs() == t.ground_truth[k].rotation().coeffs());
    }
  }

  TEST_CASE("500 m loop drifts between 2 and 8 m at the end") {
    WorldSpec spec;
    spec.preset = ForestPreset::kSparse;
    spec.seed = 1;
    spec.min_corner = Vec2(-100, -100);
    spec.max_corner = Vec2(100, 100);
    const ForestWorld world = generate_world(spec);
    PathSpec path;
    path.shape = PathShape::kCircle;
    path.radius = 500.0 / (2.0 * std::numbers::pi);
    REQUIRE(path.length() == doctest::Approx(500.0));
    double lo = 1e9, hi = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      DriftModel drift;
      drift.seed = seed;
      const Trajectory t = simulate_trajectory(world, path, drift);
      const double e = (t.odometry.back().translation() - t.ground_truth.back().translation()).norm();
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
    MESSAGE("endpoint error range over 100 seeds: [" << lo << ", " << hi << "] m");
    CHECK(lo >= 2.0);
    CHECK(hi <= 8.0);
  }

  TEST_CASE("figure-eight revisits itself") {
    PathSpec path;
    path.laps = 1.0;
    const Trajectory t = simulate_trajectory(dense_world(), path, DriftModel::none());
    std::size_t revisits = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (std::size_t j = i + 1; j < t.size(); ++j) {
        if (t.timestamps[j] - t.timestamps[i] < 30.0) continue;
        revisits += (t.ground_truth[i].translation() - t.ground_truth[j].translation()).norm() < 5.0;
      }
    }
    CHECK(revisits > 0);
  }

  TEST_CASE("paths leaving the world are an error") {
    PathSpec path;
    path.shape = PathShape::kCircle;
    path.radius = 80.0;
    CHECK_THROWS_AS(simulate_trajectory(dense_world(), path, DriftModel::none()), DataError);
    path.radius = 10.0;
    path.laps = 0.0;
    CHECK_THROWS_AS(simulate_trajectory(dense_world(), path, DriftModel::none()), ConfigError);
  }

  TEST_CASE("trajectory rendering uses one seed per keyframe") {
    PathSpec path;
    path.shape = PathShape::kCircle;
    path.radius = 5.0;
    path.laps = 0.1;
    Trajectory t = simulate_trajectory(dense_world(), path, DriftModel::none());
    render_trajectory(dense_world(), SensorModel::xt32(), 77, t);
    REQUIRE(t.scans.size() == t.size());
    for (std::size_t k = 0; k < t.size(); ++k) {
      CHECK(t.scans[k].points == render_scan(dense_world(), SensorModel::xt32(), t.ground_truth[k], mix_seed(77, k)).points);
    }
  }
}
