#include "plantprim/cloud.hpp"

#include <string>

namespace plantprim {

void PlantCloud::validate() const {
  const std::size_t n = points.size();
  if (n == 0) {
    throw InvalidArgument("cloud has no points");
  }
  if (colors.size() != n) {
    throw InvalidArgument("cloud colors: expected " + std::to_string(n) + " entries, got " + std::to_string(colors.size()));
  }
  if (!features.empty()) {
    if (features.size() != n) {
      throw InvalidArgument("cloud features: expected " + std::to_string(n) + " entries, got " +
                            std::to_string(features.size()));
    }
    const auto d = features.front().size();
    for (std::size_t i = 0; i < n; ++i) {
      if (features[i].size() != d) {
        throw InvalidArgument("cloud feature dimension mismatch at point " + std::to_string(i));
      }
    }
  }
  if (!gt_branch.empty() && gt_branch.size() != n) {
    throw InvalidArgument("cloud gt_branch length mismatch");
  }
  if (!gt_instance.empty() && gt_instance.size() != n) {
    throw InvalidArgument("cloud gt_instance length mismatch");
  }
}

double PlantCloud::extent() const {
  if (points.empty()) {
    return 1.0;
  }
  Vec3 lo = points.front();
  Vec3 hi = lo;
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double d = (hi - lo).norm();
  return d > 0.0 ? d : 1.0;
}

}  // namespace plantprim
