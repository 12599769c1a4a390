#pragma once

#include "plantprim/geometry.hpp"

#include <cstddef>
#include <vector>

namespace plantprim {

enum class PrimitiveClass { Branch, Leaf };

/// Coarse, invisible primitive. Columns of `rotation` are the principal axes
/// (v1, v2, v3) paired with `scales` sorted in descending order.
struct StructurePrimitive {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 scales = Vec3::Ones();
  double branch_logit = 0.0;
  bool active = true;

  double p_branch() const { return sigmoid(branch_logit); }
  Vec3 axis(int k) const { return rotation.col(k); }
  /// R S S^T R^T
  Mat3 covariance() const;
};

struct Cylinder {
  Vec3 center;
  Vec3 axis;
  double radius;
  double length;
};

struct Disk {
  Vec3 center;
  Vec3 normal;
  double major;
  double minor;
  Vec3 e1;
  Vec3 e2;
};

/// Dense surface-bound primitive. `parent` indexes the owning StructurePrimitive.
struct AppearancePrimitive {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 scales = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  double opacity = 1.0;
  VecX feature;
  std::size_t parent = 0;
};

/// u = v1, r = s2, l = 3 s1.
Cylinder to_cylinder(const StructurePrimitive& stp);

/// n = v3, a = 2 s1, b = s2, in-plane basis (v1, v2).
Disk to_disk(const StructurePrimitive& stp);

/// Branch iff sigmoid(logit) >= 0.5.
PrimitiveClass classify(const StructurePrimitive& stp);

/// Restores the descending-scale invariant after an update, permuting the
/// rotation columns alongside the scales and keeping det(R) = +1. Returns true
/// if a permutation was applied.
bool sort_scales(StructurePrimitive& stp);

/// Euclidean projection of the scales onto s1 >= s2 >= s3 (pool adjacent
/// violators); the rotation is left alone so the axes never swap.
void pool_scales(StructurePrimitive& stp);

/// Checks the documented invariants (orthonormal right-handed rotation,
/// sorted strictly positive scales).
bool is_valid(const StructurePrimitive& stp, double tol = 1e-9);

/// Both primitive tiers together: the unit that optimizer steps mutate.
struct Scene {
  std::vector<StructurePrimitive> stps;
  std::vector<AppearancePrimitive> apps;

  std::size_t feature_dim() const { return apps.empty() ? 0 : static_cast<std::size_t>(apps.front().feature.size()); }

  /// Drops inactive StPs and remaps ApP parents. ApPs bound to a removed StP
  /// must have been re-parented beforehand; otherwise InvalidState.
  void compact();

  /// Throws InvalidState if any ApP references a missing or inactive StP.
  void check_bindings() const;

  /// ApP indices grouped by parent.
  std::vector<std::vector<std::size_t>> apps_by_parent() const;
};

}  // namespace plantprim
