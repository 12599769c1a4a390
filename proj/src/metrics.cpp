#include "plantprim/metrics.hpp"

#include "plantprim/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace plantprim {

namespace {

double directed_mean(std::span<const Vec3> from, const KdTree& to) {
  double sum = 0.0;
  for (const auto& p : from) sum += std::sqrt(to.nearest(p).dist2);
  return sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("chamfer: point sets must be non-empty");
  const KdTree ta(a);
  const KdTree tb(b);
  // Summed in a fixed order so chamfer(a,b) == chamfer(b,a) bit for bit.
  const double ab = directed_mean(a, tb);
  const double ba = directed_mean(b, ta);
  return 0.5 * (std::min(ab, ba) + std::max(ab, ba));
}

std::vector<Vec3> sample_centerlines(const StructureGraph& graph, double samples_per_unit) {
  if (!(samples_per_unit > 0.0)) throw InvalidArgument("sample_centerlines: samples_per_unit must be positive");
  std::vector<Vec3> out;
  for (const auto& e : graph.edges) {
    const Vec3& a = graph.nodes[e.i].position;
    const Vec3& b = graph.nodes[e.j].position;
    const double len = (b - a).norm();
    const auto n = std::max<long>(1, static_cast<long>(std::ceil(len * samples_per_unit)));
    for (long k = 0; k <= n; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(n);
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

double structural_error(const StructureGraph& graph, std::span<const Vec3> gt_branch_points, double samples_per_unit) {
  if (graph.nodes.empty() || graph.edges.empty()) throw InvalidArgument("structural_error: graph is empty");
  const auto samples = sample_centerlines(graph, samples_per_unit);
  return chamfer(samples, gt_branch_points);
}

InstanceCdResult leaf_instance_cd(const std::vector<std::vector<Vec3>>& predicted,
                                  const std::vector<std::vector<Vec3>>& truth) {
  if (predicted.empty() || truth.empty()) throw InvalidArgument("leaf_instance_cd: need >= 1 instance on each side");
  for (const auto& p : predicted) {
    if (p.empty()) throw InvalidArgument("leaf_instance_cd: empty predicted instance");
  }
  for (const auto& t : truth) {
    if (t.empty()) throw InvalidArgument("leaf_instance_cd: empty ground-truth instance");
  }
  const std::size_t np = predicted.size();
  const std::size_t nt = truth.size();
  std::vector<double> cd(np * nt);
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < nt; ++j) cd[i * nt + j] = chamfer(predicted[i], truth[j]);
  }

  std::vector<std::size_t> order(cd.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cd[a] < cd[b]; });

  InstanceCdResult res;
  std::vector<bool> used_p(np, false), used_t(nt, false);
  for (std::size_t k : order) {
    const std::size_t i = k / nt;
    const std::size_t j = k % nt;
    if (used_p[i] || used_t[j]) continue;
    used_p[i] = used_t[j] = true;
    res.matches.push_back({static_cast<long>(i), static_cast<long>(j), cd[k]});
  }
  for (std::size_t i = 0; i < np; ++i) {
    if (used_p[i]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nt; ++j) best = std::min(best, cd[i * nt + j]);
    res.matches.push_back({static_cast<long>(i), -1, best});
  }
  for (std::size_t j = 0; j < nt; ++j) {
    if (used_t[j]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < np; ++i) best = std::min(best, cd[i * nt + j]);
    res.matches.push_back({-1, static_cast<long>(j), best});
  }
  double sum = 0.0;
  for (const auto& m : res.matches) sum += m.cd;
  res.mean = sum / static_cast<double>(res.matches.size());
  return res;
}

double label_accuracy(const Scene& scene, const PlantCloud& cloud) {
  if (!cloud.has_labels()) throw InvalidArgument("label_accuracy: cloud has no ground-truth labels");
  if (scene.apps.empty()) throw InvalidArgument("label_accuracy: scene has no appearance primitives");
  std::vector<Vec3> centers;
  centers.reserve(scene.apps.size());
  for (const auto& a : scene.apps) centers.push_back(a.center);
  const KdTree tree(centers);
  std::size_t correct = 0;
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    const auto& app = scene.apps[tree.nearest(cloud.points[p]).index];
    const bool branch = classify(scene.stps.at(app.parent)) == PrimitiveClass::Branch;
    correct += branch == cloud.gt_branch[p] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(cloud.size());
}

std::vector<std::vector<Vec3>> predicted_instance_points(const Scene& scene, const std::vector<int>& stp_instances) {
  if (stp_instances.size() != scene.stps.size()) {
    throw InvalidArgument("predicted_instance_points: one label per structure primitive required");
  }
  const int count = stp_instances.empty() ? 0 : *std::max_element(stp_instances.begin(), stp_instances.end()) + 1;
  std::vector<std::vector<Vec3>> out(static_cast<std::size_t>(std::max(0, count)));
  for (const auto& a : scene.apps) {
    const int label = stp_instances.at(a.parent);
    if (label >= 0) out[static_cast<std::size_t>(label)].push_back(a.center);
  }
  std::erase_if(out, [](const auto& v) { return v.empty(); });
  return out;
}

std::vector<std::vector<Vec3>> gt_instance_points(const PlantCloud& cloud) {
  std::map<int, std::vector<Vec3>> groups;
  for (std::size_t p = 0; p < cloud.gt_instance.size(); ++p) {
    if (cloud.gt_instance[p] >= 0) groups[cloud.gt_instance[p]].push_back(cloud.points[p]);
  }
  std::vector<std::vector<Vec3>> out;
  for (auto& [label, pts] : groups) out.push_back(std::move(pts));
  return out;
}

MetricsReport evaluate(const Scene& scene, const StructureGraph& graph, const std::vector<int>& stp_instances,
                       const PlantCloud& gt_cloud, const StructureGraph& gt_graph, double samples_per_unit) {
  gt_cloud.validate();
  if (gt_cloud.has_features() && scene.feature_dim() != 0 && gt_cloud.feature_dim() != scene.feature_dim()) {
    throw InvalidArgument("evaluate: feature dimension mismatch (scene " + std::to_string(scene.feature_dim()) +
                          ", cloud " + std::to_string(gt_cloud.feature_dim()) + ")");
  }
  MetricsReport r;
  r.stps = scene.stps.size();
  r.branch_stps = branch_indices(scene).size();
  r.apps = scene.apps.size();
  r.graph_nodes = graph.nodes.size();
  r.graph_edges = graph.edges.size();

  std::vector<Vec3> gt_branch;
  if (gt_cloud.has_labels()) {
    for (std::size_t p = 0; p < gt_cloud.size(); ++p) {
      if (gt_cloud.gt_branch[p]) gt_branch.push_back(gt_cloud.points[p]);
    }
  }
  std::vector<Vec3> pred_branch;
  for (const auto& a : scene.apps) {
    if (classify(scene.stps.at(a.parent)) == PrimitiveClass::Branch) pred_branch.push_back(a.center);
  }
  if (!gt_branch.empty() && !pred_branch.empty()) r.branch_chamfer = chamfer(pred_branch, gt_branch);

  if (!graph.edges.empty() && !gt_graph.edges.empty()) {
    r.structural_error = structural_error(graph, sample_centerlines(gt_graph, samples_per_unit), samples_per_unit);
  }
  if (gt_cloud.has_labels() && !scene.apps.empty()) r.label_accuracy = label_accuracy(scene, gt_cloud);

  const auto pred = predicted_instance_points(scene, stp_instances);
  const auto truth = gt_instance_points(gt_cloud);
  r.predicted_instances = pred.size();
  r.gt_instances = truth.size();
  if (!pred.empty() && !truth.empty()) {
    auto cd = leaf_instance_cd(pred, truth);
    r.leaf_instance_cd = cd.mean;
    r.instance_matches = std::move(cd.matches);
  }
  return r;
}

}  // namespace plantprim
