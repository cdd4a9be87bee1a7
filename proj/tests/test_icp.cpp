#include "fpr/error.hpp"
#include "fpr/features.hpp"
#include "fpr/icp.hpp"
#include "fpr/kd_index.hpp"
#include "support.hpp"

using namespace fpr;
using namespace fpr::test;

namespace {

// The pipeline's ICP input: full-resolution normals, 0.3 m voxels.
PointCloud icp_cloud(const PointCloud& scan) {
  PointCloud full = scan;
  const KdIndex index(full.points);
  full.normals = estimate_normals(index, 16, full.sensor_origin);
  return voxel_downsample(full, 0.3);
}

PointCloud sim_cloud(const Pose& pose, std::uint64_t seed) {
  return icp_cloud(render_scan(dense_world(), SensorModel::xt32(), pose, seed));
}

// Rolling terrain sampled on a 0.5 m grid.
PointCloud smooth_terrain() {
  PointCloud c;
  for (double x = -30; x <= 30; x += 0.5) {
    for (double y = -30; y <= 30; y += 0.5) {
      c.points.emplace_back(x, y, 2.0 * std::sin(x / 5.0) * std::cos(y / 7.0) + 0.5 * std::sin((x + y) / 3.0));
    }
  }
  c.sensor_origin = Vec3(0, 0, 10);
  return c;
}

void check_gates(const IcpResult& r) {
  const bool residual_ok = r.residual_rmse <= r.max_residual;
  const bool inliers_ok = r.inlier_count >= r.inlier_floor;
  const bool correction_ok = r.correction.translation <= r.max_correction;
  if (r.accepted) {
    CHECK(residual_ok);
    CHECK(inliers_ok);
    CHECK(correction_ok);
  } else if (r.reason != "icp diverged") {
    CHECK_FALSE((residual_ok && inliers_ok && correction_ok));
  }
}

}  // namespace

TEST_SUITE("icp") {
  TEST_CASE("a cloud registers onto itself at identity") {
    const PointCloud c = sim_cloud(Pose::from_yaw(0.4, Vec3(1, 2, 1)), 3);
    const IcpResult r = icp_refine(c, c, Pose());
    CHECK(r.accepted);
    CHECK(r.transform.translation().norm() < 1e-6);
    CHECK(pose_error(r.transform, Pose()).rotation_deg < 1e-6);
    CHECK(r.residual_rmse < 1e-6);
  }

  TEST_CASE("a shifted copy of smooth terrain is recovered") {
    const PointCloud ref = smooth_terrain();
    const Pose shift = Pose::from_translation(Vec3(0.3, 0.0, 0.0));
    const PointCloud query = transform_cloud(ref, shift.inverse());
    const IcpResult r = icp_refine(query, ref, Pose());
    CHECK(r.accepted);
    CHECK(translation_gap(r.transform, shift) < 0.01);

    const Pose diagonal = Pose::from_translation(Vec3(0.2, -0.2, 0.05));
    const IcpResult d = icp_refine(transform_cloud(ref, diagonal.inverse()), ref, Pose());
    CHECK(translation_gap(d.transform, diagonal) < 0.01);
  }

  TEST_CASE("a three meter initial error at fifteen meters separation is rejected") {
    const Pose a = Pose::from_yaw(0.1, Vec3(-10, 5, 1));
    const Pose b = Pose::from_yaw(0.6, Vec3(5, 5, 1));
    const PointCloud ca = sim_cloud(a, 21), cb = sim_cloud(b, 22);
    const Pose truth = a.inverse() * b;
    for (const Vec3& off : {Vec3(3, 0, 0), Vec3(0, -3, 0), Vec3(2.1, 2.1, 0)}) {
      const IcpResult r = icp_refine(cb, ca, Pose::from_translation(off) * truth);
      CHECK_FALSE(r.accepted);
      check_gates(r);
    }
  }

  TEST_CASE("objective does not increase across iterations") {
    const Pose a = Pose::from_yaw(0.0, Vec3(0, 0, 1));
    const PointCloud ca = sim_cloud(a, 31);
    for (const Vec3& step : {Vec3(1.0, 0, 0), Vec3(0.5, 0.5, 0)}) {
      const Pose b = Pose::from_yaw(0.1, step + Vec3(0, 0, 1));
      const Pose truth = a.inverse() * b;
      const IcpResult r = icp_refine(sim_cloud(b, 32), ca, Pose::from_translation(Vec3(0.3, -0.2, 0)) * truth);
      REQUIRE(r.trace.size() >= 2);
      for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i].rmse <= r.trace[i - 1].rmse + 1e-9);
      CHECK(r.accepted);
      CHECK(translation_gap(r.transform, truth) < 0.1);
    }
  }

  TEST_CASE("gates and correction follow from the stored record") {
    Rng rng(80);
    const Pose a = Pose::from_yaw(0.0, Vec3(0, 0, 1));
    const PointCloud ca = sim_cloud(a, 41);
    for (int trial = 0; trial < 6; ++trial) {
      const Pose b = Pose::from_yaw(rng.uniform(-0.5, 0.5), Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), 1));
      const Pose init = Pose::from_translation(Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), 0)) * (a.inverse() * b);
      const IcpResult r = icp_refine(sim_cloud(b, 42 + trial), ca, init);
      check_gates(r);
      const PoseError e = pose_error(init, r.transform);
      CHECK(r.correction.translation == doctest::Approx(e.translation).epsilon(1e-12));
      CHECK(r.correction.rotation_deg == doctest::Approx(e.rotation_deg).epsilon(1e-12));
      CHECK(r.max_residual == 0.20);
      CHECK(r.max_correction == 1.0);
      CHECK(r.inlier_floor == static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(sim_cloud(b, 42 + trial).size()))));
    }
  }

  TEST_CASE("small clouds are an error") {
    Rng rng(81);
    PointCloud small;
    small.points = random_points(rng, 99);
    const PointCloud big = smooth_terrain();
    CHECK_THROWS_AS(icp_refine(small, big, Pose()), DataError);
    CHECK_THROWS_AS(icp_refine(big, small, Pose()), DataError);
  }
}
