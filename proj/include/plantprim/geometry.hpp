#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>
#include <string>

namespace plantprim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;

/// Thrown when an argument violates an operation's precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a scene or graph is in a state an operation cannot handle
/// (dangling binding, everything pruned, non-finite loss).
class InvalidState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Skew-symmetric matrix such that skew(a) * b == a.cross(b).
Mat3 skew(const Vec3& w);

/// Rodrigues exponential of an axis-angle vector.
Mat3 exp_so3(const Vec3& w);

/// Nearest rotation (polar decomposition), det forced to +1.
Mat3 orthonormalize(const Mat3& m);

/// Right-handed frame whose third column is `normal` and whose first column
/// is the component of `hint` orthogonal to it (any orthogonal direction when
/// `hint` is parallel to `normal`).
Mat3 frame_from_normal(const Vec3& normal, const Vec3& hint);

/// Unit vector orthogonal to `v`.
Vec3 any_orthogonal(const Vec3& v);

/// Unsigned angle between two lines (u and -u identified), in [0, pi/2].
double line_angle(const Vec3& a, const Vec3& b);

bool is_rotation(const Mat3& r, double tol = 1e-9);

}  // namespace plantprim
