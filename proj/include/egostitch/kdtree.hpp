#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "egostitch/core.hpp"

namespace egostitch {

/// Squared Euclidean distance with a fixed evaluation order, so every caller
/// (tree search and linear scans alike) produces identical bits.
inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Exact nearest-neighbour index over a static point set. Results equal a
/// brute-force scan bit for bit: pruning only discards subtrees that cannot
/// hold a strictly closer point.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / kLeafSize + 2);
      build(0, static_cast<unsigned>(points_.size()));
    }
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  double nearest_squared(const Vec3& q) const {
    if (points_.empty()) throw EmptySetError("nearest neighbour query on an empty point set");
    double best = std::numeric_limits<double>::infinity();
    search(0, q, best);
    return best;
  }

  double nearest(const Vec3& q) const { return std::sqrt(nearest_squared(q)); }

 private:
  static constexpr unsigned kLeafSize = 8;

  struct Node {
    unsigned begin = 0;
    unsigned end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    unsigned left = 0;
    unsigned right = 0;
  };

  unsigned build(unsigned begin, unsigned end) {
    const unsigned id = static_cast<unsigned>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    Vec3 lo = points_[order_[begin]];
    Vec3 hi = lo;
    for (unsigned i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis]) return id;  // all points coincide

    const unsigned mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](unsigned a, unsigned b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const unsigned left = build(begin, mid);
    const unsigned right = build(mid, end);
    Node& n = nodes_[id];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  void search(unsigned id, const Vec3& q, double& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (unsigned i = n.begin; i < n.end; ++i) best = std::min(best, squared_distance(q, points_[order_[i]]));
      return;
    }
    const double diff = q[n.axis] - n.split;
    const unsigned near = diff < 0 ? n.left : n.right;
    const unsigned far = diff < 0 ? n.right : n.left;
    search(near, q, best);
    if (diff * diff < best) search(far, q, best);
  }

  std::vector<Vec3> points_;
  std::vector<unsigned> order_;
  std::vector<Node> nodes_;
};

}  // namespace egostitch
