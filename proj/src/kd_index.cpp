#include "fpr/kd_index.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "fpr/error.hpp"

namespace fpr {
namespace {

constexpr std::uint32_t kLeafSize = 12;

struct Candidate {
  double d2;
  std::size_t id;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && id < o.id); }
};

}  // namespace

KdIndex::KdIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto index = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, -1, 0.0});
  if (end - begin <= kLeafSize) return index;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return index;  // all points coincide

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& node = nodes_[index];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return index;
}

void KdIndex::check_query(std::size_t k) const {
  if (points_.empty()) throw DataError("empty index");
  if (k == 0) throw Error("nearest: k must be at least 1");
}

std::vector<Neighbor> KdIndex::nearest(const Vec3& query, std::size_t k) const {
  check_query(k);
  k = std::min(k, points_.size());
  std::priority_queue<Candidate> heap;  // worst candidate on top

  auto visit = [&](auto&& self, std::int32_t ni) -> void {
    const Node& node = nodes_[ni];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t id = order_[i];
        const Candidate c{(points_[id] - query).squaredNorm(), id};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double diff = query[node.axis] - node.split;
    const std::int32_t first = diff < 0.0 ? node.left : node.right;
    const std::int32_t second = diff < 0.0 ? node.right : node.left;
    self(self, first);
    // Equal-distance points on the far side may still win on id, so only
    // strictly farther planes are pruned.
    if (heap.size() < k || diff * diff <= heap.top().d2) self(self, second);
  };
  visit(visit, 0);

  std::vector<Neighbor> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = {heap.top().id, std::sqrt(heap.top().d2)};
    heap.pop();
  }
  return out;
}

Neighbor KdIndex::nearest_one(const Vec3& query) const {
  check_query(1);
  Candidate best{std::numeric_limits<double>::infinity(), 0};
  auto visit = [&](auto&& self, std::int32_t ni) -> void {
    const Node& node = nodes_[ni];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t id = order_[i];
        const Candidate c{(points_[id] - query).squaredNorm(), id};
        if (c < best) best = c;
      }
      return;
    }
    const double diff = query[node.axis] - node.split;
    self(self, diff < 0.0 ? node.left : node.right);
    if (diff * diff <= best.d2) self(self, diff < 0.0 ? node.right : node.left);
  };
  visit(visit, 0);
  return {best.id, std::sqrt(best.d2)};
}

std::vector<Neighbor> KdIndex::within(const Vec3& query, double radius) const {
  check_query(1);
  const double r2 = radius * radius;
  std::vector<Candidate> found;
  auto visit = [&](auto&& self, std::int32_t ni) -> void {
    const Node& node = nodes_[ni];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t id = order_[i];
        const double d2 = (points_[id] - query).squaredNorm();
        if (d2 <= r2) found.push_back({d2, id});
      }
      return;
    }
    const double diff = query[node.axis] - node.split;
    self(self, diff < 0.0 ? node.left : node.right);
    if (diff * diff <= r2) self(self, diff < 0.0 ? node.right : node.left);
  };
  visit(visit, 0);
  std::sort(found.begin(), found.end());
  std::vector<Neighbor> out;
  out.reserve(found.size());
  for (const Candidate& c : found) out.push_back({c.id, std::sqrt(c.d2)});
  return out;
}

}  // namespace fpr
