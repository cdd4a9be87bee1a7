#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fpr/geometry.hpp"

namespace fpr {

struct Neighbor {
  std::size_t id = 0;
  double distance = 0.0;
};

/// Exact kd-tree over a fixed point set.
///
/// Results are sorted by ascending distance with ties broken by the lower
/// point id, so they match a brute-force scan exactly. Queries are const and
/// may run concurrently once construction has finished.
class KdIndex {
 public:
  KdIndex() = default;
  explicit KdIndex(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(std::size_t id) const { return points_[id]; }

  /// k nearest points; fewer when the index holds less than k.
  std::vector<Neighbor> nearest(const Vec3& query, std::size_t k) const;
  Neighbor nearest_one(const Vec3& query) const;
  /// All points within `radius` (inclusive), ascending.
  std::vector<Neighbor> within(const Vec3& query, double radius) const;

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t axis = -1;  // -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void check_query(std::size_t k) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace fpr
