#pragma once

#include "plantprim/geometry.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace plantprim {

/// Static 3-d k-d tree over a copied point set. Queries are exact; ties in
/// distance resolve to the lower index so results are reproducible.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  struct Hit {
    std::size_t index;
    double dist2;
  };

  bool empty() const { return points_.empty(); }
  std::size_t size() const { return points_.size(); }

  Hit nearest(const Vec3& q) const;
  /// Up to k nearest, sorted by (distance, index).
  std::vector<Hit> knn(const Vec3& q, std::size_t k) const;
  std::size_t count_within(const Vec3& q, double radius) const;
  std::vector<std::size_t> within(const Vec3& q, double radius) const;

 private:
  struct Node {
    std::size_t begin;
    std::size_t end;
    int axis;
    double split;
    int left = -1;
    int right = -1;
  };

  int build(std::size_t begin, std::size_t end, int depth);
  void nearest_rec(int node, const Vec3& q, Hit& best) const;
  void knn_rec(int node, const Vec3& q, std::size_t k, std::vector<Hit>& heap) const;
  void within_rec(int node, const Vec3& q, double r2, std::vector<std::size_t>* out, std::size_t& count) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace plantprim
