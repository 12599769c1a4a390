#include "plantprim/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>

namespace plantprim {

Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return s;
}

Mat3 exp_so3(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 k = skew(w);
  if (theta < 1e-12) {
    return Mat3::Identity() + k;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) {
    u.col(2) = -u.col(2);
  }
  return u * v.transpose();
}

Vec3 any_orthogonal(const Vec3& v) {
  const Vec3 n = v.normalized();
  const Vec3 trial = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return (trial - trial.dot(n) * n).normalized();
}

Mat3 frame_from_normal(const Vec3& normal, const Vec3& hint) {
  const Vec3 z = normal.normalized();
  Vec3 x = hint - hint.dot(z) * z;
  if (x.norm() < 1e-12) {
    x = any_orthogonal(z);
  } else {
    x.normalize();
  }
  const Vec3 y = z.cross(x);
  Mat3 f;
  f.col(0) = x;
  f.col(1) = y;
  f.col(2) = z;
  return f;
}

double line_angle(const Vec3& a, const Vec3& b) {
  const double c = std::abs(a.normalized().dot(b.normalized()));
  return std::acos(std::clamp(c, 0.0, 1.0));
}

bool is_rotation(const Mat3& r, double tol) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

}  // namespace plantprim
