#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <span>
#include <vector>

#include "fpr/geometry.hpp"
#include "fpr/kd_index.hpp"

namespace fpr {

inline constexpr int kFpfhBins = 33;
using FpfhHistogram = Eigen::Matrix<double, kFpfhBins, 1>;

struct FeatureConfig {
  double voxel = 0.4;            // meters
  int normal_neighbors = 16;
  double feature_radius = 3.5;   // meters
  double keypoint_range = 20.0;  // planar distance from the sensor, meters
  double max_normal_z = 0.8;     // |n_z| above this is ground-like and not a keypoint
  std::size_t min_points = 50;
};

/// Keypoints with L1-normalized FPFH histograms, one per keypoint.
struct FeatureSet {
  std::vector<Vec3> keypoints;
  std::vector<Vec3> normals;
  std::vector<FpfhHistogram> descriptors;

  std::size_t size() const { return keypoints.size(); }
  bool empty() const { return keypoints.empty(); }
};

struct Correspondence {
  std::size_t query = 0;
  std::size_t ref = 0;
  double distance = 0.0;  // descriptor space (L2)
};
using CorrespondenceSet = std::vector<Correspondence>;

/// Centroid per occupied voxel, ordered by voxel key. Normals, when present,
/// are sign-aligned, averaged and renormalized.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

/// PCA normals over k nearest neighbors, flipped to face `viewpoint`.
std::vector<Vec3> estimate_normals(const KdIndex& index, int k, const Vec3& viewpoint);

/// Downsamples, estimates normals into the returned cloud.
PointCloud downsample_with_normals(const PointCloud& cloud, double voxel, int normal_neighbors);

/// FPFH for every point with enough neighbors; points with fewer than three
/// neighbors inside `radius` are dropped from the returned set.
FeatureSet compute_fpfh(std::span<const Vec3> points, std::span<const Vec3> normals, double radius);

/// As above, but only the points flagged in `keypoint` are described. The
/// other points still serve as histogram support.
FeatureSet compute_fpfh(std::span<const Vec3> points, std::span<const Vec3> normals, double radius,
                        const std::vector<bool>& keypoint);

/// Normals at full resolution, voxel averaging, keypoint selection and
/// FPFH. Throws "degenerate scan" when the cloud has fewer than
/// config.min_points points.
FeatureSet extract_features(const PointCloud& cloud, const FeatureConfig& config = {});

/// Mutual nearest neighbors in descriptor space passing the ratio test,
/// sorted by ascending descriptor distance.
CorrespondenceSet match_features(const FeatureSet& query, const FeatureSet& ref, double ratio = 0.9);

/// x,y,z followed by the 33 histogram values per line.
void write_features_csv(std::ostream& out, const FeatureSet& features);

}  // namespace fpr
