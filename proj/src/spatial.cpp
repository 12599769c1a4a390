#include "plantprim/spatial.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace plantprim {

namespace {

constexpr std::size_t kLeafSize = 8;

bool closer(const KdTree::Hit& a, const KdTree::Hit& b) {
  return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, points_.size(), 0);
  }
}

int KdTree::build(std::size_t begin, std::size_t end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end, -1, 0.0});
  if (end - begin <= kLeafSize) {
    return id;
  }
  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) {
    return id;  // all coincident: keep as leaf
  }
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                     const double pa = points_[a][axis];
                     const double pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  (void)depth;
  return id;
}

KdTree::Hit KdTree::nearest(const Vec3& q) const {
  Hit best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
  if (!nodes_.empty()) {
    nearest_rec(0, q, best);
  }
  return best;
}

void KdTree::nearest_rec(int node_id, const Vec3& q, Hit& best) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const Hit h{order_[i], (points_[order_[i]] - q).squaredNorm()};
      if (closer(h, best)) {
        best = h;
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int first = diff < 0.0 ? node.left : node.right;
  const int second = diff < 0.0 ? node.right : node.left;
  nearest_rec(first, q, best);
  if (diff * diff <= best.dist2) {
    nearest_rec(second, q, best);
  }
}

std::vector<KdTree::Hit> KdTree::knn(const Vec3& q, std::size_t k) const {
  std::vector<Hit> heap;
  if (k == 0 || nodes_.empty()) {
    return heap;
  }
  heap.reserve(k + 1);
  knn_rec(0, q, k, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

void KdTree::knn_rec(int node_id, const Vec3& q, std::size_t k, std::vector<Hit>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const Hit h{order_[i], (points_[order_[i]] - q).squaredNorm()};
      if (heap.size() < k) {
        heap.push_back(h);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(h, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = h;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int first = diff < 0.0 ? node.left : node.right;
  const int second = diff < 0.0 ? node.right : node.left;
  knn_rec(first, q, k, heap);
  if (heap.size() < k || diff * diff <= heap.front().dist2) {
    knn_rec(second, q, k, heap);
  }
}

std::size_t KdTree::count_within(const Vec3& q, double radius) const {
  std::size_t count = 0;
  if (!nodes_.empty()) {
    within_rec(0, q, radius * radius, nullptr, count);
  }
  return count;
}

std::vector<std::size_t> KdTree::within(const Vec3& q, double radius) const {
  std::vector<std::size_t> out;
  std::size_t count = 0;
  if (!nodes_.empty()) {
    within_rec(0, q, radius * radius, &out, count);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void KdTree::within_rec(int node_id, const Vec3& q, double r2, std::vector<std::size_t>* out, std::size_t& count) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      if ((points_[order_[i]] - q).squaredNorm() <= r2) {
        ++count;
        if (out != nullptr) {
          out->push_back(order_[i]);
        }
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int first = diff < 0.0 ? node.left : node.right;
  const int second = diff < 0.0 ? node.right : node.left;
  within_rec(first, q, r2, out, count);
  if (diff * diff <= r2) {
    within_rec(second, q, r2, out, count);
  }
}

}  // namespace plantprim
