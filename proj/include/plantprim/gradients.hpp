#pragma once

#include "plantprim/primitives.hpp"

#include <vector>

namespace plantprim {

/// Gradient of a scalar objective with respect to one StP. Terms accumulate
/// into `axes` (one column per principal axis, as if R were unconstrained);
/// `finalize` projects that onto the rotation tangent `rotation`, defined by the
/// right perturbation R exp([w]x).
struct StpGrad {
  Vec3 center = Vec3::Zero();
  Vec3 scales = Vec3::Zero();
  Mat3 axes = Mat3::Zero();
  Vec3 rotation = Vec3::Zero();
  double logit = 0.0;
};

struct AppGrad {
  Vec3 center = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  VecX feature;
};

struct Gradients {
  std::vector<StpGrad> stp;
  std::vector<AppGrad> app;

  static Gradients zeros_like(const Scene& scene);

  /// Converts accumulated column gradients into rotation-tangent gradients.
  void finalize(const Scene& scene);

  void add(const Gradients& other, double scale);
  bool all_finite() const;
  double max_abs() const;
};

/// Chain rule for endpoint p = mu + sign * s1 * v1.
inline void accumulate_endpoint(StpGrad& g, const StructurePrimitive& stp, double sign, const Vec3& dp) {
  g.center += dp;
  g.scales[0] += sign * dp.dot(stp.axis(0));
  g.axes.col(0) += sign * stp.scales[0] * dp;
}

}  // namespace plantprim
