#include "../support/oracles.hpp"
#include "plantprim/init.hpp"
#include "plantprim/synthgen.hpp"

#include <doctest.h>

#include <map>
#include <random>
#include <set>

using namespace plantprim;

namespace {

std::vector<Vec3> blobs(std::uint64_t seed, const std::vector<Vec3>& centers, int per, double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<Vec3> pts;
  for (const auto& c : centers) {
    for (int i = 0; i < per; ++i) pts.push_back(c + Vec3(n(rng), n(rng), n(rng)));
  }
  return pts;
}

PlantCloud cloud_of(const std::vector<Vec3>& pts) {
  PlantCloud c;
  c.points = pts;
  c.colors.assign(pts.size(), Vec3(0.5, 0.5, 0.5));
  return c;
}

}  // namespace

TEST_CASE("kmeans reaches the enumerated optimum for two-cluster splits of small sets") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> pts;
    for (int i = 0; i < 5; ++i) pts.push_back(Vec3(u(rng), u(rng), u(rng)));
    for (int i = 0; i < 5; ++i) pts.push_back(Vec3(4 + u(rng), u(rng), u(rng)));
    const auto labels = kmeans(pts, 2, static_cast<std::uint64_t>(trial));
    CHECK(oracle::sse_of(pts, labels, 2) == doctest::Approx(oracle::best_two_partition_sse(pts)).epsilon(1e-12));
  }
}

TEST_CASE("kmeans output is a Lloyd fixed point") {
  const auto pts = blobs(22, {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(1, 1, 1)}, 40, 0.3);
  const int k = 5;
  const auto labels = kmeans(pts, k, 7);
  std::vector<Vec3> mean(k, Vec3::Zero());
  std::vector<int> count(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    mean[static_cast<std::size_t>(labels[i])] += pts[i];
    ++count[static_cast<std::size_t>(labels[i])];
  }
  for (int c = 0; c < k; ++c) {
    REQUIRE(count[static_cast<std::size_t>(c)] > 0);
    mean[static_cast<std::size_t>(c)] /= count[static_cast<std::size_t>(c)];
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double own = (pts[i] - mean[static_cast<std::size_t>(labels[i])]).squaredNorm();
    for (int c = 0; c < k; ++c) CHECK(own <= (pts[i] - mean[static_cast<std::size_t>(c)]).squaredNorm() + 1e-12);
  }
}

TEST_CASE("kmeans separates well-spaced blobs exactly") {
  const auto pts = blobs(23, {Vec3(0, 0, 0), Vec3(5, 0, 0), Vec3(0, 5, 0)}, 30, 0.2);
  const auto labels = kmeans(pts, 3, 1);
  for (int b = 0; b < 3; ++b) {
    std::set<int> seen;
    for (int i = 0; i < 30; ++i) seen.insert(labels[static_cast<std::size_t>(b * 30 + i)]);
    CHECK(seen.size() == 1);
  }
  CHECK(std::set<int>(labels.begin(), labels.end()).size() == 3);
}

TEST_CASE("kmeans never leaves a cluster empty and rejects bad k") {
  std::vector<Vec3> pts(6, Vec3(1, 1, 1));
  pts.push_back(Vec3(2, 2, 2));
  const auto labels = kmeans(pts, 4, 0);
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  CHECK(counts.size() == 4);
  CHECK_THROWS_AS(kmeans(pts, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(kmeans(pts, 8, 0), InvalidArgument);
}

TEST_CASE("kmeans is deterministic for a seed") {
  const auto pts = blobs(24, {Vec3(0, 0, 0), Vec3(1, 1, 0)}, 50, 0.5);
  CHECK(kmeans(pts, 4, 9) == kmeans(pts, 4, 9));
}

TEST_CASE("pca eigenvalues match the closed-form symmetric 3x3 solution") {
  std::mt19937_64 rng(25);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Mat3 r = exp_so3(Vec3(n(rng), n(rng), n(rng)));
    const Vec3 sd(1.0 + trial * 0.1, 0.5, 0.1);
    std::vector<Vec3> pts;
    for (int i = 0; i < 300; ++i) pts.push_back(Vec3(1, 2, 3) + r * Vec3(sd[0] * n(rng), sd[1] * n(rng), sd[2] * n(rng)));
    const PcaResult pca = pca_cluster(pts);
    const Mat3 cov = oracle::covariance(pts);
    const Vec3 ev = oracle::sym3_eigenvalues(cov);
    for (int k = 0; k < 3; ++k) CHECK(pca.eigenvalues[k] == doctest::Approx(ev[k]).epsilon(1e-8));
    for (int k = 0; k < 3; ++k) {
      const Vec3 v = oracle::sym3_eigenvector(cov, ev[k]);
      CHECK(std::abs(std::abs(v.dot(pca.eigenvectors.col(k))) - 1.0) < 1e-6);
    }
    CHECK(is_rotation(pca.eigenvectors, 1e-9));
    CHECK(pca.eigenvalues[0] >= pca.eigenvalues[1]);
    CHECK(pca.eigenvalues[1] >= pca.eigenvalues[2]);
  }
}

TEST_CASE("cluster count is one cluster per hundred points") {
  CHECK(InitConfig{}.points_per_cluster == 100);
  CHECK(cluster_count(1000, 100) == 10);
  CHECK(cluster_count(1099, 100) == 10);
  CHECK(cluster_count(50, 100) == 1);
}

TEST_CASE("initial branch-leaf probabilities are 0.6 and 0.4") {
  CHECK(kBranchLikeProbability == 0.6);
  CHECK(kLeafLikeProbability == 0.4);
}

TEST_CASE("fifty appearance primitives per structure primitive by default") {
  CHECK(InitConfig{}.apps_per_stp == 50);
  const auto plant = generate(y_junction_spec(3));
  const Scene scene = init_scene(plant.cloud, InitConfig{});
  CHECK(scene.apps.size() == 50 * scene.stps.size());
  CHECK(static_cast<int>(scene.stps.size()) == cluster_count(plant.cloud.size(), 100));
  const auto groups = scene.apps_by_parent();
  for (const auto& g : groups) CHECK(g.size() == 50);
}

TEST_CASE("init scales are 1.5 times the principal standard deviations") {
  CHECK(InitConfig{}.alpha_st == 1.5);
  std::mt19937_64 rng(26);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(Vec3(0.5 * n(rng), 0.05 * n(rng), 0.01 * n(rng)));
  const auto stps = init_stps(cloud_of(pts), InitConfig{});
  REQUIRE(stps.size() == 1);
  const Vec3 ev = oracle::sym3_eigenvalues(oracle::covariance(pts));
  for (int k = 0; k < 3; ++k) CHECK(stps[0].scales[k] == doctest::Approx(1.5 * std::sqrt(ev[k])).epsilon(1e-6));
  // Elongated and thin: branch-like.
  CHECK(stps[0].p_branch() == doctest::Approx(0.6));
  CHECK(is_valid(stps[0]));
}

TEST_CASE("planar clusters start leaf-like") {
  std::mt19937_64 rng(27);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(Vec3(0.3 * n(rng), 0.2 * n(rng), 0.005 * n(rng)));
  const auto stps = init_stps(cloud_of(pts), InitConfig{});
  CHECK(stps[0].p_branch() == doctest::Approx(0.4));
}

TEST_CASE("sampled appearance primitives lie on the class surface") {
  PlantCloud cloud = cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  const KdTree index(cloud.points);
  StructurePrimitive branch;
  branch.scales = Vec3(0.5, 0.1, 0.1);
  branch.branch_logit = logit(0.6);
  for (const auto& a : sample_apps(branch, 0, 200, 1, cloud, index)) {
    const Vec3 w = a.center - branch.center;
    CHECK(std::hypot(w.y(), w.z()) == doctest::Approx(0.1));
    CHECK(std::abs(w.x()) <= 0.75 + 1e-12);
    CHECK(a.parent == 0);
  }
  StructurePrimitive leaf;
  leaf.scales = Vec3(0.2, 0.1, 0.01);
  leaf.branch_logit = logit(0.4);
  for (const auto& a : sample_apps(leaf, 3, 200, 1, cloud, index)) {
    const Vec3 w = a.center - leaf.center;
    CHECK(std::abs(w.z()) < 1e-15);
    CHECK((w.x() / 0.4) * (w.x() / 0.4) + (w.y() / 0.1) * (w.y() / 0.1) <= 1.0 + 1e-12);
    CHECK(a.parent == 3);
  }
}

TEST_CASE("init config validation") {
  InitConfig c;
  c.apps_per_stp = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.alpha_st = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
