#include "plantprim/density.hpp"
#include "plantprim/init.hpp"
#include "plantprim/synthgen.hpp"

#include <doctest.h>

#include <set>

using namespace plantprim;

namespace {

StructurePrimitive branch_along(const Vec3& center, const Vec3& axis, double half_len, double radius) {
  StructurePrimitive s;
  s.center = center;
  const Mat3 f = frame_from_normal(axis.normalized(), any_orthogonal(axis));
  s.rotation.col(0) = f.col(2);
  s.rotation.col(1) = f.col(0);
  s.rotation.col(2) = f.col(1);
  s.scales = Vec3(half_len, radius, radius);
  s.branch_logit = 3.0;
  return s;
}

StructurePrimitive leaf_disk(const Vec3& center, const Vec3& normal, const Vec3& major, double s1, double s2) {
  StructurePrimitive s;
  s.center = center;
  s.rotation = frame_from_normal(normal, major);
  s.scales = Vec3(s1, s2, 0.01);
  s.branch_logit = -3.0;
  return s;
}

void bind_app(Scene& scene, const Vec3& c, std::size_t parent, double opacity = 1.0) {
  AppearancePrimitive a;
  a.center = c;
  a.parent = parent;
  a.opacity = opacity;
  scene.apps.push_back(a);
}

}  // namespace

TEST_CASE("densify leaves the scene alone when nothing is over threshold") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3::Zero(), Vec3::UnitZ(), 0.5, 0.05));
  bind_app(scene, Vec3::Zero(), 0);
  const Scene before = scene;
  CHECK(densify_stps(scene, {0.0}, DensityConfig{}) == 0);
  CHECK(scene.stps.size() == 1);
  CHECK(scene.stps[0].center == before.stps[0].center);
}

TEST_CASE("densify halves along the major axis and splits the bound ApPs") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3::Zero(), Vec3::UnitZ(), 0.5, 0.05));
  bind_app(scene, Vec3(0, 0, 0.3), 0);
  bind_app(scene, Vec3(0, 0, -0.3), 0);
  CHECK(densify_stps(scene, {1.0}, DensityConfig{}) == 1);
  REQUIRE(scene.stps.size() == 2);
  CHECK(scene.stps[0].scales[0] == doctest::Approx(0.25));
  CHECK((scene.stps[0].center - Vec3(0, 0, 0.25)).norm() < 1e-12);
  CHECK((scene.stps[1].center - Vec3(0, 0, -0.25)).norm() < 1e-12);
  CHECK(scene.apps[0].parent == 0);
  CHECK(scene.apps[1].parent == 1);
  for (const auto& s : scene.stps) CHECK(is_valid(s));
}

TEST_CASE("densify skips primitives too stubby to halve") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3::Zero(), Vec3::UnitZ(), 0.15, 0.1));
  bind_app(scene, Vec3::Zero(), 0);
  DensityConfig cfg;
  CHECK(cfg.split_min_aspect == 2.0);
  CHECK(densify_stps(scene, {1.0}, cfg) == 0);
  cfg.split_min_aspect = 0.0;
  CHECK(densify_stps(scene, {1.0}, cfg) == 1);
}

TEST_CASE("densify respects the primitive cap") {
  Scene scene;
  for (int i = 0; i < 4; ++i) scene.stps.push_back(branch_along(Vec3(i, 0, 0), Vec3::UnitZ(), 0.5, 0.05));
  DensityConfig cfg;
  cfg.max_stps = 4;
  CHECK(densify_stps(scene, {1, 1, 1, 1}, cfg) == 0);
  CHECK(scene.stps.size() == 4);
}

TEST_CASE("prune removes tiny and transparent primitives and rebinds their ApPs") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3::Zero(), Vec3::UnitZ(), 0.5, 0.05));
  scene.stps.push_back(branch_along(Vec3(1, 0, 0), Vec3::UnitZ(), 1e-4, 1e-4));
  scene.stps.push_back(branch_along(Vec3(2, 0, 0), Vec3::UnitZ(), 0.5, 0.05));
  bind_app(scene, Vec3(0, 0.05, 0), 0);
  bind_app(scene, Vec3(1, 0, 0), 1);
  bind_app(scene, Vec3(2, 0.05, 0), 2, 0.01);
  CHECK(prune_stps(scene, DensityConfig{}) == 2);
  CHECK(scene.stps.size() == 1);
  for (const auto& a : scene.apps) CHECK(a.parent == 0);
  CHECK_NOTHROW(scene.check_bindings());
}

TEST_CASE("prune keeps healthy scenes and refuses to remove everything") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3::Zero(), Vec3::UnitZ(), 0.5, 0.05));
  bind_app(scene, Vec3::Zero(), 0);
  CHECK(prune_stps(scene, DensityConfig{}) == 0);
  scene.apps[0].opacity = 0.0;
  CHECK_THROWS_AS(prune_stps(scene, DensityConfig{}), InvalidState);
}

TEST_CASE("collinear abutting cylinders merge into one of the summed length") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3(0, 0, 0.5), Vec3::UnitZ(), 0.5, 0.05));
  scene.stps.push_back(branch_along(Vec3(0, 0, 1.5), Vec3::UnitZ(), 0.5, 0.05));
  bind_app(scene, Vec3(0, 0.05, 1.5), 1);
  CHECK(merge_branch_stps(scene, DensityConfig{}) == 1);
  REQUIRE(scene.stps.size() == 1);
  const Cylinder cy = to_cylinder(scene.stps[0]);
  CHECK(2.0 * scene.stps[0].scales[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(cy.radius == doctest::Approx(0.05).epsilon(1e-6));
  CHECK((cy.center - Vec3(0, 0, 1)).norm() < 1e-9);
  CHECK(std::abs(cy.axis.z()) == doctest::Approx(1.0));
  CHECK(scene.apps[0].parent == 0);
  CHECK(is_valid(scene.stps[0]));
}

TEST_CASE("perpendicular cylinders sharing an endpoint do not merge") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3(0, 0, 0.5), Vec3::UnitZ(), 0.5, 0.05));
  scene.stps.push_back(branch_along(Vec3(0.5, 0, 1.0), Vec3::UnitX(), 0.5, 0.05));
  DensityConfig cfg;
  cfg.merge_axis_cos_min = 0.9;
  CHECK(merge_branch_stps(scene, cfg) == 0);
  CHECK(scene.stps.size() == 2);
}

TEST_CASE("lone primitives are untouched by merging") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3::Zero(), Vec3::UnitZ(), 0.5, 0.05));
  const auto before = scene.stps[0];
  CHECK(merge_branch_stps(scene, DensityConfig{}) == 0);
  CHECK(scene.stps[0].center == before.center);
  CHECK(scene.stps[0].scales == before.scales);
}

TEST_CASE("radius filter prunes an oversized child but never a root") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3(0, 0, 0.5), Vec3::UnitZ(), 0.5, 0.05));
  scene.stps.push_back(branch_along(Vec3(0, 0, 1.6), Vec3::UnitZ(), 0.5, 0.15));
  scene.stps.push_back(branch_along(Vec3(0, 0, 2.7), Vec3::UnitZ(), 0.5, 0.04));
  for (std::size_t i = 0; i < 3; ++i) bind_app(scene, scene.stps[i].center, i);
  const StructureGraph g = build_graph(scene, GraphConfig{});
  REQUIRE(g.count(EdgeKind::Cross) == 2);
  CHECK(radius_filter(scene, g, DensityConfig{}) == 1);
  CHECK(scene.stps.size() == 2);
  CHECK(scene.stps[1].scales[1] == 0.04);

  Scene taper;
  taper.stps.push_back(branch_along(Vec3(0, 0, 0.5), Vec3::UnitZ(), 0.5, 0.5));
  taper.stps.push_back(branch_along(Vec3(0, 0, 1.6), Vec3::UnitZ(), 0.5, 0.05));
  for (std::size_t i = 0; i < 2; ++i) bind_app(taper, taper.stps[i].center, i);
  CHECK(radius_filter(taper, build_graph(taper, GraphConfig{}), DensityConfig{}) == 0);
}

TEST_CASE("stub branches are pruned unless every branch is a stub") {
  Scene scene;
  scene.stps.push_back(branch_along(Vec3(0, 0, 0.5), Vec3::UnitZ(), 0.5, 0.05));
  scene.stps.push_back(branch_along(Vec3(0, 0, 1.1), Vec3::UnitZ(), 0.06, 0.05));
  scene.stps.push_back(leaf_disk(Vec3(1, 0, 1), Vec3::UnitZ(), Vec3::UnitX(), 0.05, 0.04));
  bind_app(scene, Vec3(0, 0.05, 1.1), 1);
  DensityConfig cfg;
  CHECK(prune_stub_branches(scene, cfg) == 1);
  CHECK(scene.stps.size() == 2);
  CHECK(scene.apps[0].parent == 0);

  Scene stubs;
  stubs.stps.push_back(branch_along(Vec3::Zero(), Vec3::UnitZ(), 0.06, 0.05));
  CHECK(prune_stub_branches(stubs, cfg) == 0);
  cfg.stub_aspect_min = 0.0;
  CHECK(prune_stub_branches(scene, cfg) == 0);
}

TEST_CASE("leaf clustering: overlapping aligned disks join, distant ones do not") {
  Scene scene;
  scene.stps.push_back(leaf_disk(Vec3(0, 0, 0), Vec3::UnitZ(), Vec3::UnitX(), 0.1, 0.05));
  scene.stps.push_back(leaf_disk(Vec3(0.1, 0, 0), Vec3::UnitZ(), Vec3::UnitX(), 0.1, 0.05));
  scene.stps.push_back(leaf_disk(Vec3(5, 0, 0), Vec3::UnitZ(), Vec3::UnitX(), 0.1, 0.05));
  scene.stps.push_back(branch_along(Vec3(0, 0, -1), Vec3::UnitZ(), 0.5, 0.05));
  const auto labels = cluster_leaf_instances(scene, DensityConfig{});
  CHECK(labels == std::vector<int>{0, 0, 1, -1});
}

TEST_CASE("leaf clustering compares major axes only for elongated disks") {
  DensityConfig cfg;
  Scene crossed;
  crossed.stps.push_back(leaf_disk(Vec3(0, 0, 0), Vec3::UnitZ(), Vec3::UnitX(), 0.3, 0.1));
  crossed.stps.push_back(leaf_disk(Vec3(0.1, 0, 0), Vec3::UnitZ(), Vec3::UnitY(), 0.3, 0.1));
  CHECK(cluster_leaf_instances(crossed, cfg) == std::vector<int>{0, 1});
  Scene round = crossed;
  round.stps[1].scales = Vec3(0.15, 0.1, 0.01);  // aspect 1.5: major axis is not meaningful
  CHECK(cluster_leaf_instances(round, cfg) == std::vector<int>{0, 0});
  cfg.leaf_isotropy_tol = 0.2;
  CHECK(cluster_leaf_instances(round, cfg) == std::vector<int>{0, 1});
  Scene tilted = crossed;
  tilted.stps[1] = leaf_disk(Vec3(0.1, 0, 0), Vec3::UnitX(), Vec3::UnitY(), 0.3, 0.1);
  CHECK(cluster_leaf_instances(tilted, DensityConfig{}) == std::vector<int>{0, 1});
}

TEST_CASE("leaf clustering recovers well separated synthetic leaves from chopped disks") {
  SynthSpec spec;
  spec.depth = 2;
  spec.branching_factor = 2;
  spec.leaves_per_terminal = 1;
  spec.seed = 4;
  const SynthPlant plant = generate(spec);
  REQUIRE(plant.leaf_instances == 4);
  Scene scene;
  for (const auto& leaf : plant.leaves) {
    // Three disks per leaf along its major axis.
    for (int k = -1; k <= 1; ++k) {
      scene.stps.push_back(
          leaf_disk(leaf.center + k * 0.6 * leaf.major * leaf.major_axis, leaf.normal, leaf.major_axis, leaf.major / 4, leaf.minor));
    }
  }
  const auto labels = cluster_leaf_instances(scene, DensityConfig{});
  for (std::size_t l = 0; l < plant.leaves.size(); ++l) {
    CHECK(labels[3 * l] == labels[3 * l + 1]);
    CHECK(labels[3 * l] == labels[3 * l + 2]);
  }
  CHECK(std::set<int>(labels.begin(), labels.end()).size() == 4);
}

TEST_CASE("density config validation") {
  DensityConfig c;
  c.radius_growth_max = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.leaf_isotropy_tol = -0.1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
