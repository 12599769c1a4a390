#pragma once

#include "plantprim/geometry.hpp"

#include <optional>
#include <vector>

namespace plantprim {

/// Observed plant points. Optional channels are either empty or sized like `points`.
struct PlantCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;
  std::vector<VecX> features;
  std::vector<bool> gt_branch;
  std::vector<int> gt_instance;  // -1 = branch / unlabeled

  std::size_t size() const { return points.size(); }
  bool has_features() const { return !features.empty(); }
  bool has_labels() const { return !gt_branch.empty(); }
  bool has_instances() const { return !gt_instance.empty(); }
  std::size_t feature_dim() const { return features.empty() ? 0 : static_cast<std::size_t>(features.front().size()); }

  /// Throws InvalidArgument on empty clouds, channel length mismatches or
  /// inconsistent feature dimension.
  void validate() const;

  /// Bounding-box diagonal; 1.0 for degenerate clouds.
  double extent() const;
};

}  // namespace plantprim
