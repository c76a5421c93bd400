#pragma once

#include "nift/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <vector>

namespace nift {

// Static 3-d tree over a point set for exact k-nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(Points pts) : pts_(std::move(pts)), idx_(pts_.size()) {
    std::iota(idx_.begin(), idx_.end(), 0u);
    if (!pts_.empty()) build(0, idx_.size(), 0);
  }

  std::size_t size() const { return pts_.size(); }
  const Points& points() const { return pts_; }

  struct Neighbor {
    std::size_t index;
    double sq_distance;
  };

  // k nearest points to q sorted by distance (ties by index); optionally
  // skipping one index (for self-queries).
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k, std::size_t skip = npos) const {
    std::vector<Neighbor> heap;  // max-heap on (distance, index)
    if (k == 0 || pts_.empty()) return heap;
    heap.reserve(k + 1);
    search(0, idx_.size(), 0, q, k, skip, heap);
    std::sort_heap(heap.begin(), heap.end(), less);
    return heap;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  static bool less(const Neighbor& a, const Neighbor& b) {
    return a.sq_distance < b.sq_distance || (a.sq_distance == b.sq_distance && a.index < b.index);
  }

  void build(std::size_t lo, std::size_t hi, int depth) {
    if (hi - lo <= 1) return;
    const int axis = depth % 3;
    const std::size_t mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
  }

  void search(std::size_t lo, std::size_t hi, int depth, const Vec3& q, std::size_t k, std::size_t skip,
              std::vector<Neighbor>& heap) const {
    if (lo >= hi) return;
    const int axis = depth % 3;
    const std::size_t mid = (lo + hi) / 2;
    const std::size_t i = idx_[mid];
    if (i != skip) {
      Neighbor n{i, (pts_[i] - q).squaredNorm()};
      if (heap.size() < k) {
        heap.push_back(n);
        std::push_heap(heap.begin(), heap.end(), less);
      } else if (less(n, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), less);
        heap.back() = n;
        std::push_heap(heap.begin(), heap.end(), less);
      }
    }
    const double diff = q[axis] - pts_[i][axis];
    const bool left_first = diff < 0.0;
    if (left_first)
      search(lo, mid, depth + 1, q, k, skip, heap);
    else
      search(mid + 1, hi, depth + 1, q, k, skip, heap);
    if (heap.size() < k || diff * diff <= heap.front().sq_distance) {
      if (left_first)
        search(mid + 1, hi, depth + 1, q, k, skip, heap);
      else
        search(lo, mid, depth + 1, q, k, skip, heap);
    }
  }

  Points pts_;
  std::vector<std::size_t> idx_;
};

// Median nearest-neighbour spacing of a point set.
inline double median_nn_spacing(const Points& pts) {
  if (pts.size() < 2) throw Error("need at least two points for spacing");
  KdTree tree(pts);
  std::vector<double> d(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) d[i] = std::sqrt(tree.knn(pts[i], 1, i).front().sq_distance);
  const std::size_t m = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + m, d.end());
  if (d.size() % 2 == 1) return d[m];
  const double upper = d[m];
  std::nth_element(d.begin(), d.begin() + m - 1, d.begin() + m);
  return 0.5 * (upper + d[m - 1]);
}

}  // namespace nift
