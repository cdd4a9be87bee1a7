#include <map>
#include <set>
#include <sstream>

#include "fpr/error.hpp"
#include "fpr/features.hpp"
#include "fpr/kd_index.hpp"
#include "support.hpp"

using namespace fpr;
using namespace fpr::test;

namespace {

// Quarter turn about the sensor. Done by swapping coordinates so that it is
// exact in floating point and maps the voxel grid onto itself.
Pose grid_motion() { return Pose::from_yaw(std::numbers::pi / 2); }

PointCloud quarter_turn(const PointCloud& c) {
  PointCloud out = c;
  for (Vec3& p : out.points) p = Vec3(-p.y(), p.x(), p.z());
  for (Vec3& n : out.normals) n = Vec3(-n.y(), n.x(), n.z());
  out.sensor_origin = Vec3(-c.sensor_origin.y(), c.sensor_origin.x(), c.sensor_origin.z());
  return out;
}

// Points exactly on a voxel face (the azimuth-zero beam has y == 0) change
// voxel under a quarter turn, so the scan leaves them out.
const PointCloud& quiet_scan() {
  static const PointCloud scan = [] {
    PointCloud c = render_scan(dense_world(), quiet_xt32(), Pose::from_yaw(0.3, Vec3(3, -4, 1)), 7);
    const double voxel = FeatureConfig{}.voxel;
    std::erase_if(c.points, [voxel](const Vec3& p) {
      return std::floor(p.x() / voxel) == p.x() / voxel || std::floor(p.y() / voxel) == p.y() / voxel;
    });
    return c;
  }();
  return scan;
}

FpfhHistogram random_histogram(Rng& rng) {
  FpfhHistogram h;
  for (int i = 0; i < kFpfhBins; ++i) h(i) = rng.uniform();
  return h / h.sum();
}

// Pairs each keypoint of `b` with the nearest keypoint of `a` mapped by `motion`.
std::vector<std::pair<std::size_t, double>> nearest_pairing(const FeatureSet& a, const FeatureSet& b,
                                                            const Pose& motion) {
  std::vector<Vec3> moved;
  for (const Vec3& p : a.keypoints) moved.push_back(motion * p);
  const KdIndex index(moved);
  std::vector<std::pair<std::size_t, double>> out;
  for (const Vec3& p : b.keypoints) {
    const Neighbor n = index.nearest(p, 1)[0];
    out.emplace_back(n.id, n.distance);
  }
  return out;
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("plane normals follow the plane") {
    Rng rng(50);
    const Vec3 normal = Vec3(0.3, -0.2, 1.0).normalized();
    const Vec3 u = normal.unitOrthogonal(), v = normal.cross(u);
    std::vector<Vec3> pts;
    for (int i = 0; i < 2000; ++i) pts.push_back(Vec3(0, 0, -2) + rng.uniform(-5, 5) * u + rng.uniform(-5, 5) * v);
    const KdIndex index(pts);
    const auto normals = estimate_normals(index, 16, Vec3(0, 0, 10));
    for (const Vec3& n : normals) {
      CHECK(std::acos(std::min(1.0, std::abs(n.dot(normal)))) / kDeg < 1.0);
      CHECK(n.dot(Vec3(0, 0, 10) - pts[0]) > 0.0);  // faces the viewpoint
    }
  }

  TEST_CASE("voxel downsampling matches a per-cell average") {
    Rng rng(51);
    PointCloud c;
    c.points = random_points(rng, 3000, 3.0);
    const PointCloud down = voxel_downsample(c, 0.5);
    std::map<std::tuple<long, long, long>, std::pair<Vec3, int>> cells;
    for (const Vec3& p : c.points) {
      auto [it, fresh] = cells.try_emplace({std::lround(std::floor(p.x() / 0.5)), std::lround(std::floor(p.y() / 0.5)),
                                            std::lround(std::floor(p.z() / 0.5))},
                                           Vec3::Zero(), 0);
      auto& cell = it->second;
      cell.first += p;
      ++cell.second;
    }
    REQUIRE(down.size() == cells.size());
    std::size_t i = 0;
    for (const auto& [key, cell] : cells) CHECK((down.points[i++] - cell.first / cell.second).norm() < 1e-12);
    CHECK_THROWS_AS(voxel_downsample(c, 0.0), ConfigError);
  }

  TEST_CASE("extraction is deterministic and histograms are normalized") {
    const FeatureSet a = extract_features(quiet_scan());
    const FeatureSet b = extract_features(quiet_scan());
    REQUIRE(a.size() > 100);
    REQUIRE(a.size() == b.size());
    REQUIRE(a.normals.size() == a.size());
    REQUIRE(a.descriptors.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.keypoints[i] == b.keypoints[i]);
      CHECK(a.descriptors[i] == b.descriptors[i]);
      CHECK(a.descriptors[i].minCoeff() >= 0.0);
      CHECK(std::abs(a.descriptors[i].sum() - 1.0) < 1e-6);
    }
    std::ostringstream csv;
    write_features_csv(csv, a);
    const std::string text = csv.str();
    CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == a.size());
  }

  TEST_CASE("too few points is a degenerate scan") {
    PointCloud c;
    Rng rng(52);
    c.points = random_points(rng, 49);
    CHECK_THROWS_WITH_AS(extract_features(c), "degenerate scan", DataError);
  }

  TEST_CASE("rigidly moved cloud gives matching descriptors") {
    const PointCloud& scan = quiet_scan();
    const FeatureSet a = extract_features(scan);
    const FeatureSet b = extract_features(quarter_turn(scan));
    const auto pairs = nearest_pairing(a, b, grid_motion());
    std::size_t within = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double l1 = (b.descriptors[i] - a.descriptors[pairs[i].first]).lpNorm<1>();
      within += l1 <= 0.05 ? 1 : 0;
    }
    CHECK(b.size() == a.size());
    CHECK(within == b.size());
  }

  TEST_CASE("matching a set against itself pairs every keypoint with itself") {
    const FeatureSet f = extract_features(quiet_scan());
    const CorrespondenceSet m = match_features(f, f);
    REQUIRE(m.size() == f.size());
    for (const Correspondence& c : m) {
      CHECK(c.query == c.ref);
      CHECK(c.distance == 0.0);
    }
  }

  TEST_CASE("random histograms leave almost nothing after the ratio test") {
    Rng rng(53);
    FeatureSet q, r;
    for (int i = 0; i < 300; ++i) {
      q.keypoints.push_back(Vec3::Zero());
      q.descriptors.push_back(random_histogram(rng));
      r.keypoints.push_back(Vec3::Zero());
      r.descriptors.push_back(random_histogram(rng));
    }
    CHECK(match_features(q, r).size() <= 15);
  }

  TEST_CASE("correspondences are mutual nearest neighbors, unique and sorted") {
    Rng rng(54);
    FeatureSet q, r;
    for (int i = 0; i < 120; ++i) {
      q.keypoints.push_back(Vec3::Zero());
      q.descriptors.push_back(random_histogram(rng));
    }
    // Noisy copies give plenty of survivors.
    for (int i = 0; i < 150; ++i) {
      r.keypoints.push_back(Vec3::Zero());
      FpfhHistogram h = i < 120 ? q.descriptors[(i * 37) % 120] : random_histogram(rng);
      for (int b = 0; b < kFpfhBins; ++b) h(b) = std::max(0.0, h(b) + rng.normal(0.0, 0.002));
      r.descriptors.push_back(h / h.sum());
    }
    const CorrespondenceSet m = match_features(q, r, 0.9);
    REQUIRE(m.size() > 50);
    std::set<std::size_t> seen;
    for (std::size_t k = 0; k < m.size(); ++k) {
      const Correspondence& c = m[k];
      CHECK(seen.insert(c.query).second);
      if (k > 0) CHECK(m[k - 1].distance <= c.distance);
      for (std::size_t j = 0; j < r.size(); ++j) {
        CHECK((q.descriptors[c.query] - r.descriptors[c.ref]).norm() <= (q.descriptors[c.query] - r.descriptors[j]).norm());
      }
      for (std::size_t i = 0; i < q.size(); ++i) {
        CHECK((q.descriptors[c.query] - r.descriptors[c.ref]).norm() <= (q.descriptors[i] - r.descriptors[c.ref]).norm());
      }
    }
  }

  TEST_CASE("rigid invariance on a noiseless cloud") {
    const PointCloud& scan = quiet_scan();
    const FeatureSet a = extract_features(scan);
    const FeatureSet b = extract_features(quarter_turn(scan));
    const CorrespondenceSet m = match_features(b, a);
    std::size_t self = 0;
    for (const Correspondence& c : m) self += (grid_motion() * a.keypoints[c.ref] - b.keypoints[c.query]).norm() < 1e-6;
    CHECK(static_cast<double>(self) >= 0.9 * static_cast<double>(a.size()));
  }

  TEST_CASE("simulated scans two meters apart share many correct matches") {
    const SensorModel sensor = SensorModel::xt32();
    const Pose pa = Pose::from_yaw(0.2, Vec3(-6, 8, 1));
    const Pose pb = Pose::from_yaw(0.2, Vec3(-4, 8, 1));
    const FeatureSet a = extract_features(render_scan(dense_world(), sensor, pa, 11));
    const FeatureSet b = extract_features(render_scan(dense_world(), sensor, pb, 12));
    const CorrespondenceSet m = match_features(b, a);
    const Pose truth = pa.inverse() * pb;  // query frame -> ref frame
    std::size_t inliers = 0;
    for (const Correspondence& c : m) inliers += (truth * b.keypoints[c.query] - a.keypoints[c.ref]).norm() <= 0.5;
    const double matched = static_cast<double>(m.size()) / static_cast<double>(std::min(a.size(), b.size()));
    const double inlier_rate = m.empty() ? 0.0 : static_cast<double>(inliers) / static_cast<double>(m.size());
    MESSAGE("matched fraction " << matched << ", inlier rate " << inlier_rate);
    CHECK(matched >= 0.30);
    CHECK(inlier_rate >= 0.80);
  }
}
