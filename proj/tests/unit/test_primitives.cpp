#include "plantprim/primitives.hpp"

#include <doctest.h>

#include <random>

using namespace plantprim;

namespace {

StructurePrimitive make_stp(const Vec3& center, const Mat3& rot, const Vec3& scales, double p) {
  StructurePrimitive s;
  s.center = center;
  s.rotation = rot;
  s.scales = scales;
  s.branch_logit = logit(p);
  return s;
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  return exp_so3(Vec3(u(rng), u(rng), u(rng)));
}

}  // namespace

TEST_CASE("exp_so3 produces rotations and matches Rodrigues about z") {
  const Mat3 r = exp_so3(Vec3(0, 0, std::numbers::pi / 2));
  CHECK((r * Vec3::UnitX() - Vec3::UnitY()).norm() < 1e-12);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) CHECK(is_rotation(random_rotation(rng)));
  CHECK((exp_so3(Vec3::Zero()) - Mat3::Identity()).norm() < 1e-15);
}

TEST_CASE("skew reproduces the cross product") {
  const Vec3 a(1.0, -2.0, 0.5), b(0.3, 0.7, -1.1);
  CHECK((skew(a) * b - a.cross(b)).norm() < 1e-14);
}

TEST_CASE("orthonormalize returns the nearest proper rotation") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1e-3);
  const Mat3 r = random_rotation(rng);
  Mat3 noisy = r;
  for (int i = 0; i < 9; ++i) noisy.data()[i] += n(rng);
  const Mat3 o = orthonormalize(noisy);
  CHECK(is_rotation(o));
  CHECK((o - r).norm() < 1e-2);
}

TEST_CASE("frame_from_normal puts the normal in column 2 and the hint in column 0") {
  const Mat3 f = frame_from_normal(Vec3(0, 0, 2), Vec3(1, 0, 1));
  CHECK(is_rotation(f));
  CHECK((f.col(2) - Vec3::UnitZ()).norm() < 1e-12);
  CHECK((f.col(0) - Vec3::UnitX()).norm() < 1e-12);
  CHECK(is_rotation(frame_from_normal(Vec3::UnitZ(), Vec3::UnitZ())));
}

TEST_CASE("line_angle identifies opposite directions") {
  CHECK(line_angle(Vec3::UnitX(), -Vec3::UnitX()) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(line_angle(Vec3::UnitX(), Vec3::UnitY()) == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("cylinder mapping: axis v1, radius s2, length 3 s1") {
  std::mt19937_64 rng(11);
  const Mat3 r = random_rotation(rng);
  const auto s = make_stp(Vec3(1, 2, 3), r, Vec3(0.4, 0.1, 0.05), 0.9);
  const Cylinder cy = to_cylinder(s);
  CHECK((cy.center - Vec3(1, 2, 3)).norm() == 0.0);
  CHECK((cy.axis - r.col(0)).norm() < 1e-15);
  CHECK(cy.radius == 0.1);
  CHECK(cy.length == doctest::Approx(1.2));
}

TEST_CASE("disk mapping: normal v3, semi-axes 2 s1 and s2, basis (v1, v2)") {
  std::mt19937_64 rng(12);
  const Mat3 r = random_rotation(rng);
  const auto s = make_stp(Vec3(-1, 0, 1), r, Vec3(0.3, 0.2, 0.01), 0.1);
  const Disk di = to_disk(s);
  CHECK((di.normal - r.col(2)).norm() < 1e-15);
  CHECK(di.major == doctest::Approx(0.6));
  CHECK(di.minor == 0.2);
  CHECK((di.e1 - r.col(0)).norm() < 1e-15);
  CHECK((di.e2 - r.col(1)).norm() < 1e-15);
}

TEST_CASE("classification threshold sits at probability one half, inclusive for branches") {
  StructurePrimitive s;
  s.branch_logit = 0.0;
  CHECK(classify(s) == PrimitiveClass::Branch);
  s.branch_logit = -1e-12;
  CHECK(classify(s) == PrimitiveClass::Leaf);
  s.branch_logit = logit(0.6);
  CHECK(s.p_branch() == doctest::Approx(0.6));
}

TEST_CASE("covariance is R S S^T R^T") {
  std::mt19937_64 rng(13);
  const Mat3 r = random_rotation(rng);
  const auto s = make_stp(Vec3::Zero(), r, Vec3(3, 2, 1), 0.5);
  const Mat3 c = s.covariance();
  const Vec3 sq(9, 4, 1);
  for (int k = 0; k < 3; ++k) CHECK((c * r.col(k) - sq[k] * r.col(k)).norm() < 1e-12);
}

TEST_CASE("sort_scales permutes axes with scales and keeps a proper rotation") {
  std::mt19937_64 rng(14);
  const Mat3 r = random_rotation(rng);
  auto s = make_stp(Vec3::Zero(), r, Vec3(0.1, 0.5, 0.3), 0.5);
  const Mat3 before = s.covariance();
  CHECK(sort_scales(s));
  CHECK(is_valid(s));
  CHECK((s.covariance() - before).norm() < 1e-12);
  CHECK_FALSE(sort_scales(s));
}

TEST_CASE("pool_scales projects onto the ordered cone without touching the rotation") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 r = random_rotation(rng);
    auto s = make_stp(Vec3::Zero(), r, Vec3(u(rng), u(rng), u(rng)), 0.5);
    const Vec3 x = s.scales;
    pool_scales(s);
    CHECK(s.rotation == r);
    CHECK(s.scales[0] >= s.scales[1]);
    CHECK(s.scales[1] >= s.scales[2]);
    // Oracle: the projection onto a closed convex cone is the closest point, so
    // it must beat every ordered candidate on a coarse grid around x.
    const double d = (s.scales - x).squaredNorm();
    for (double a = 0.0; a <= 1.0; a += 0.05) {
      for (double b = 0.0; b <= a; b += 0.05) {
        for (double c = 0.0; c <= b; c += 0.05) CHECK(d <= (Vec3(a, b, c) - x).squaredNorm() + 1e-12);
      }
    }
  }
  auto sorted = make_stp(Vec3::Zero(), Mat3::Identity(), Vec3(3, 2, 1), 0.5);
  pool_scales(sorted);
  CHECK(sorted.scales == Vec3(3, 2, 1));
  auto pair = make_stp(Vec3::Zero(), Mat3::Identity(), Vec3(1, 3, 0.5), 0.5);
  pool_scales(pair);
  CHECK((pair.scales - Vec3(2, 2, 0.5)).norm() < 1e-15);
}

TEST_CASE("is_valid rejects reflections, unsorted and non-positive scales") {
  StructurePrimitive s;
  s.scales = Vec3(3, 2, 1);
  CHECK(is_valid(s));
  s.rotation.col(2) *= -1.0;
  CHECK_FALSE(is_valid(s));
  s.rotation = Mat3::Identity();
  s.scales = Vec3(1, 2, 3);
  CHECK_FALSE(is_valid(s));
  s.scales = Vec3(1, 0.5, 0.0);
  CHECK_FALSE(is_valid(s));
}

TEST_CASE("compact remaps parents and refuses dangling bindings") {
  Scene scene;
  scene.stps.resize(3);
  scene.stps[1].active = false;
  AppearancePrimitive a;
  a.parent = 2;
  scene.apps.push_back(a);
  scene.compact();
  CHECK(scene.stps.size() == 2);
  CHECK(scene.apps[0].parent == 1);
  CHECK_NOTHROW(scene.check_bindings());

  scene.stps[1].active = false;
  CHECK_THROWS_AS(scene.check_bindings(), InvalidState);
  CHECK_THROWS_AS(scene.compact(), InvalidState);
}

TEST_CASE("apps_by_parent groups indices") {
  Scene scene;
  scene.stps.resize(2);
  for (std::size_t p : {1u, 0u, 1u}) {
    AppearancePrimitive a;
    a.parent = p;
    scene.apps.push_back(a);
  }
  const auto g = scene.apps_by_parent();
  CHECK(g[0] == std::vector<std::size_t>{1});
  CHECK(g[1] == std::vector<std::size_t>{0, 2});
}
