#pragma once

#include "plantprim/cloud.hpp"
#include "plantprim/primitives.hpp"
#include "plantprim/spatial.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace plantprim {

struct InitConfig {
  int points_per_cluster = 100;
  double alpha_st = 1.5;
  int apps_per_stp = 50;
  double elongation_min = 4.0;  // sqrt(l1)/sqrt(l2) above this is elongated
  double flatness_max = 0.25;   // sqrt(l3)/sqrt(l1) below this is thin
  std::uint64_t seed = 0;

  void validate() const;
};

/// Initial branch-leaf probabilities for anisotropic and planar clusters.
inline constexpr double kBranchLikeProbability = 0.6;
inline constexpr double kLeafLikeProbability = 0.4;

/// Lloyd iterations with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its current center. Stops when assignments are
/// stable or after 100 iterations.
std::vector<int> kmeans(std::span<const Vec3> points, int k, std::uint64_t seed);

struct PcaResult {
  Vec3 mean;
  Vec3 eigenvalues;   // descending, non-negative
  Mat3 eigenvectors;  // columns, right-handed
};

PcaResult pca_cluster(std::span<const Vec3> points);

/// Number of clusters used for a cloud of n points.
int cluster_count(std::size_t n, int points_per_cluster);

std::vector<StructurePrimitive> init_stps(const PlantCloud& cloud, const InitConfig& config);

/// Samples n ApPs on the explicit surface matching the StP's class: the
/// lateral cylinder surface for branches, the filled ellipse for leaves.
/// Color and feature come from the nearest cloud point.
std::vector<AppearancePrimitive> sample_apps(const StructurePrimitive& stp, std::size_t stp_index, int n,
                                             std::uint64_t seed, const PlantCloud& cloud, const KdTree& cloud_index);

/// init_stps followed by sample_apps for every StP.
Scene init_scene(const PlantCloud& cloud, const InitConfig& config);

}  // namespace plantprim
