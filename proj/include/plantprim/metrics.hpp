#pragma once

#include "plantprim/cloud.hpp"
#include "plantprim/primitives.hpp"
#include "plantprim/structgraph.hpp"

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace plantprim {

/// 0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|). Empty input -> InvalidArgument.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);

/// Points along every edge, including both endpoints, spaced at most
/// 1/samples_per_unit apart.
std::vector<Vec3> sample_centerlines(const StructureGraph& graph, double samples_per_unit);

/// Chamfer between the graph's centerline samples and the reference branch points.
double structural_error(const StructureGraph& graph, std::span<const Vec3> gt_branch_points, double samples_per_unit);

struct InstanceMatch {
  long predicted = -1;  // -1 when a ground-truth instance is unmatched
  long truth = -1;      // -1 when a predicted instance is unmatched
  double cd = 0.0;
};

struct InstanceCdResult {
  double mean = 0.0;
  std::vector<InstanceMatch> matches;
};

/// Greedy minimum-CD one-to-one matching; leftover instances on either side
/// are charged the CD to their nearest counterpart. Mean over all entries.
InstanceCdResult leaf_instance_cd(const std::vector<std::vector<Vec3>>& predicted,
                                  const std::vector<std::vector<Vec3>>& truth);

struct MetricsReport {
  std::optional<double> branch_chamfer;
  std::optional<double> structural_error;
  std::optional<double> leaf_instance_cd;
  std::vector<InstanceMatch> instance_matches;
  std::optional<double> label_accuracy;
  std::size_t stps = 0;
  std::size_t branch_stps = 0;
  std::size_t apps = 0;
  std::size_t graph_nodes = 0;
  std::size_t graph_edges = 0;
  std::size_t predicted_instances = 0;
  std::size_t gt_instances = 0;
};

/// Fraction of cloud points whose nearest ApP's parent class matches gt_branch.
double label_accuracy(const Scene& scene, const PlantCloud& cloud);

/// ApP centers grouped by the instance label of their parent StP.
std::vector<std::vector<Vec3>> predicted_instance_points(const Scene& scene, const std::vector<int>& stp_instances);

/// Cloud points grouped by gt_instance (labels >= 0).
std::vector<std::vector<Vec3>> gt_instance_points(const PlantCloud& cloud);

MetricsReport evaluate(const Scene& scene, const StructureGraph& graph, const std::vector<int>& stp_instances,
                       const PlantCloud& gt_cloud, const StructureGraph& gt_graph, double samples_per_unit = 200.0);

}  // namespace plantprim
