#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include "vg/cloud.hpp"

namespace vg {

// Static 3-d tree over a borrowed point array. Squared distances are computed
// as (p - q).squaredNorm() so callers comparing against brute force see
// bit-identical values.
class KdTree {
 public:
  explicit KdTree(std::span<const Point3> pts, int leaf_size = 12)
      : pts_(pts), leaf_size_(std::max(1, leaf_size)), order_(pts.size()) {
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    if (!pts_.empty()) build(0, static_cast<std::uint32_t>(order_.size()));
  }

  std::size_t size() const noexcept { return pts_.size(); }

  // Squared distances of the k nearest points to q (q itself included when it
  // is one of the stored points), ascending.
  std::vector<double> knn_sq_dists(const Point3& q, std::size_t k) const {
    std::priority_queue<double> heap;  // max-heap of the best k so far
    if (k > 0 && !nodes_.empty()) knn(0, q, k, heap);
    std::vector<double> out(heap.size());
    for (auto i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

  // Indices of all points with squared distance <= r2, ascending by index.
  std::vector<std::uint32_t> radius(const Point3& q, double r2) const {
    std::vector<std::uint32_t> out;
    if (!nodes_.empty()) radius(0, q, r2, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t radius_count(const Point3& q, double r2) const {
    std::size_t n = 0;
    if (!nodes_.empty()) radius_count(0, q, r2, n);
    return n;
  }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0;
    Point3 lo, hi;  // bounding box of the range
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end) {
    Node n;
    n.begin = begin;
    n.end = end;
    n.lo = n.hi = pts_[order_[begin]];
    for (auto i = begin; i < end; ++i) {
      n.lo = n.lo.cwiseMin(pts_[order_[i]]);
      n.hi = n.hi.cwiseMax(pts_[order_[i]]);
    }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(n);
    if (end - begin <= static_cast<std::uint32_t>(leaf_size_)) return id;
    int axis = 0;
    (n.hi - n.lo).maxCoeff(&axis);
    const auto mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return pts_[a][axis] < pts_[b][axis]; });
    nodes_[id].axis = axis;
    nodes_[id].split = pts_[order_[mid]][axis];
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  static double box_sq_dist(const Node& n, const Point3& q) {
    double d = 0;
    for (int a = 0; a < 3; ++a) {
      const double e = q[a] < n.lo[a] ? n.lo[a] - q[a] : (q[a] > n.hi[a] ? q[a] - n.hi[a] : 0.0);
      d += e * e;
    }
    return d;
  }

  void knn(std::int32_t id, const Point3& q, std::size_t k, std::priority_queue<double>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_sq_dist(n, q) > heap.top()) return;
    if (n.left < 0) {
      for (auto i = n.begin; i < n.end; ++i) {
        const double d = (pts_[order_[i]] - q).squaredNorm();
        if (heap.size() < k) {
          heap.push(d);
        } else if (d < heap.top()) {
          heap.pop();
          heap.push(d);
        }
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    knn(go_left ? n.left : n.right, q, k, heap);
    knn(go_left ? n.right : n.left, q, k, heap);
  }

  void radius(std::int32_t id, const Point3& q, double r2, std::vector<std::uint32_t>& out) const {
    const Node& n = nodes_[id];
    if (box_sq_dist(n, q) > r2) return;
    if (n.left < 0) {
      for (auto i = n.begin; i < n.end; ++i)
        if ((pts_[order_[i]] - q).squaredNorm() <= r2) out.push_back(order_[i]);
      return;
    }
    radius(n.left, q, r2, out);
    radius(n.right, q, r2, out);
  }

  void radius_count(std::int32_t id, const Point3& q, double r2, std::size_t& count) const {
    const Node& n = nodes_[id];
    if (box_sq_dist(n, q) > r2) return;
    if (n.left < 0) {
      for (auto i = n.begin; i < n.end; ++i)
        count += (pts_[order_[i]] - q).squaredNorm() <= r2;
      return;
    }
    radius_count(n.left, q, r2, count);
    radius_count(n.right, q, r2, count);
  }

  std::span<const Point3> pts_;
  int leaf_size_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace vg
