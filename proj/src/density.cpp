#include "plantprim/density.hpp"

#include "plantprim/init.hpp"
#include "plantprim/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace plantprim {

namespace {

std::vector<std::size_t> components(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& links) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const auto& [a, b] : links) {
    const std::size_t ra = find(a);
    const std::size_t rb = find(b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<std::size_t> root(n);
  for (std::size_t i = 0; i < n; ++i) root[i] = find(i);
  return root;
}

double mean_branch_radius(const Scene& scene) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : scene.stps) {
    if (s.active && classify(s) == PrimitiveClass::Branch) {
      sum += s.scales[1];
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

void DensityConfig::validate() const {
  if (max_stps < 1) throw InvalidArgument("density: max_stps must be >= 1");
  if (!(densify_grad_threshold > 0.0) || !(prune_scale_min > 0.0) || !(prune_opacity_min > 0.0)) {
    throw InvalidArgument("density: thresholds must be positive");
  }
  if (!(merge_axis_cos_min > 0.0 && merge_axis_cos_min < 1.0)) {
    throw InvalidArgument("density: merge_axis_cos_min must be in (0,1)");
  }
  if (!(leaf_isotropy_tol >= 0.0)) throw InvalidArgument("density: leaf_isotropy_tol must be >= 0");
  if (!(stub_aspect_min >= 0.0)) throw InvalidArgument("density: stub_aspect_min must be >= 0");
  if (!(split_min_aspect >= 0.0)) throw InvalidArgument("density: split_min_aspect must be >= 0");
  if (!(radius_growth_max > 1.0)) throw InvalidArgument("density: radius_growth_max must exceed 1");
  if (!(leaf_angle_max > 0.0)) throw InvalidArgument("density: leaf_angle_max must be positive");
  if (densify_interval < 1) throw InvalidArgument("density: densify_interval must be >= 1");
}

double surface_distance(const StructurePrimitive& stp, const Vec3& q) {
  if (classify(stp) == PrimitiveClass::Branch) {
    const Cylinder cy = to_cylinder(stp);
    const Vec3 w = q - cy.center;
    const double t = w.dot(cy.axis);
    const double radial = (w - t * cy.axis).norm();
    const double axial = std::max(0.0, std::abs(t) - 0.5 * cy.length);
    return std::hypot(std::max(0.0, radial - cy.radius), axial);
  }
  return dist_point_disk(q, to_disk(stp));
}

void rebind_orphans(Scene& scene) {
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (scene.stps[i].active) alive.push_back(i);
  }
  if (alive.empty()) {
    throw InvalidState("no structure primitives left to bind appearance primitives to");
  }
  for (auto& app : scene.apps) {
    if (app.parent < scene.stps.size() && scene.stps[app.parent].active) continue;
    std::size_t best = alive.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i : alive) {
      const double d = surface_distance(scene.stps[i], app.center);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    app.parent = best;
  }
  scene.compact();
}

int densify_stps(Scene& scene, const std::vector<double>& grad_accum, const DensityConfig& cfg) {
  cfg.validate();
  if (scene.stps.size() >= static_cast<std::size_t>(cfg.max_stps)) return 0;
  std::vector<std::size_t> over;
  for (std::size_t i = 0; i < scene.stps.size() && i < grad_accum.size(); ++i) {
    const auto& st = scene.stps[i];
    if (!st.active || !(grad_accum[i] > cfg.densify_grad_threshold)) continue;
    if (cfg.split_min_aspect > 0.0 && st.scales[0] < cfg.split_min_aspect * st.scales[1]) continue;
    over.push_back(i);
  }
  if (over.empty()) return 0;
  std::stable_sort(over.begin(), over.end(), [&](std::size_t a, std::size_t b) { return grad_accum[a] > grad_accum[b]; });
  const auto quota = static_cast<std::size_t>(
      std::max(1.0, std::ceil(cfg.densify_top_fraction * static_cast<double>(scene.stps.size()))));
  const std::size_t room = static_cast<std::size_t>(cfg.max_stps) - scene.stps.size();
  over.resize(std::min({over.size(), quota, room}));

  auto groups = scene.apps_by_parent();
  int splits = 0;
  for (std::size_t i : over) {
    StructurePrimitive a = scene.stps[i];
    const Vec3 u = a.axis(0);
    const double half = 0.5 * a.scales[0];
    StructurePrimitive b = a;
    a.center += half * u;
    b.center -= half * u;
    a.scales[0] = half;
    b.scales[0] = half;
    sort_scales(a);
    sort_scales(b);
    const std::size_t bi = scene.stps.size();
    for (std::size_t app : groups[i]) {
      const Vec3& q = scene.apps[app].center;
      if ((q - b.center).squaredNorm() < (q - a.center).squaredNorm()) scene.apps[app].parent = bi;
    }
    scene.stps[i] = a;
    scene.stps.push_back(b);
    ++splits;
  }
  return splits;
}

int prune_stps(Scene& scene, const DensityConfig& cfg) {
  cfg.validate();
  const auto groups = scene.apps_by_parent();
  std::size_t survivors = 0;
  std::vector<bool> drop(scene.stps.size(), false);
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (!scene.stps[i].active) continue;
    double opacity = 0.0;
    for (std::size_t a : groups[i]) opacity += scene.apps[a].opacity;
    if (!groups[i].empty()) opacity /= static_cast<double>(groups[i].size());
    drop[i] = scene.stps[i].scales[0] < cfg.prune_scale_min || opacity < cfg.prune_opacity_min;
    if (!drop[i]) ++survivors;
  }
  if (survivors == 0) {
    throw InvalidState("prune_stps: every structure primitive would be removed");
  }
  int removed = 0;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (drop[i]) {
      scene.stps[i].active = false;
      ++removed;
    }
  }
  if (removed > 0) rebind_orphans(scene);
  return removed;
}

int prune_stub_branches(Scene& scene, const DensityConfig& cfg) {
  cfg.validate();
  if (!(cfg.stub_aspect_min > 0.0)) return 0;
  std::vector<std::size_t> stubs;
  std::size_t branches = 0;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    const auto& s = scene.stps[i];
    if (!s.active || classify(s) != PrimitiveClass::Branch) continue;
    ++branches;
    if (s.scales[0] < cfg.stub_aspect_min * s.scales[1]) stubs.push_back(i);
  }
  if (stubs.empty() || stubs.size() == branches) return 0;
  for (std::size_t i : stubs) scene.stps[i].active = false;
  rebind_orphans(scene);
  return static_cast<int>(stubs.size());
}

int merge_branch_stps(Scene& scene, const DensityConfig& cfg) {
  cfg.validate();
  int removed_total = 0;
  for (int round = 0; round < 64; ++round) {
    const std::vector<std::size_t> branch = branch_indices(scene);
    if (branch.size() < 2) break;
    const double radius = cfg.merge_radius > 0.0 ? cfg.merge_radius : 0.5 * mean_branch_radius(scene);

    std::vector<std::pair<std::size_t, std::size_t>> links;
    for (std::size_t a = 0; a < branch.size(); ++a) {
      const auto& sa = scene.stps[branch[a]];
      const auto [ta, ba] = stp_endpoints(sa);
      for (std::size_t b = a + 1; b < branch.size(); ++b) {
        const auto& sb = scene.stps[branch[b]];
        if (std::abs(sa.axis(0).dot(sb.axis(0))) < cfg.merge_axis_cos_min) continue;
        const auto [tb, bb] = stp_endpoints(sb);
        const double d = std::min({(ta - tb).norm(), (ta - bb).norm(), (ba - tb).norm(), (ba - bb).norm()});
        if (d <= radius) links.emplace_back(a, b);
      }
    }
    if (links.empty()) break;

    const auto root = components(branch.size(), links);
    int removed = 0;
    for (std::size_t r = 0; r < branch.size(); ++r) {
      if (root[r] != r) continue;
      std::vector<std::size_t> group;
      for (std::size_t m = 0; m < branch.size(); ++m) {
        if (root[m] == r) group.push_back(branch[m]);
      }
      if (group.size() < 2) continue;

      std::vector<Vec3> ends;
      double radius_sum = 0.0;
      double logit_sum = 0.0;
      for (std::size_t s : group) {
        const auto [t, b] = stp_endpoints(scene.stps[s]);
        ends.push_back(t);
        ends.push_back(b);
        radius_sum += scene.stps[s].scales[1];
        logit_sum += scene.stps[s].branch_logit;
      }
      const PcaResult pca = pca_cluster(ends);
      const Vec3 axis = pca.eigenvectors.col(0);
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const auto& e : ends) {
        const double t = (e - pca.mean).dot(axis);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
      const double r_mean = radius_sum / static_cast<double>(group.size());

      StructurePrimitive merged = scene.stps[group.front()];
      merged.center = pca.mean;
      merged.rotation = frame_from_normal(axis, merged.axis(1));
      // frame_from_normal puts `axis` in column 2; rotate columns so it leads.
      Mat3 rot;
      rot.col(0) = merged.rotation.col(2);
      rot.col(1) = merged.rotation.col(0);
      rot.col(2) = merged.rotation.col(1);
      merged.rotation = rot;
      merged.scales = Vec3(std::max(0.5 * (hi - lo), r_mean), r_mean, r_mean);
      merged.branch_logit = logit_sum / static_cast<double>(group.size());
      merged.active = true;
      scene.stps[group.front()] = merged;
      for (std::size_t k = 1; k < group.size(); ++k) {
        scene.stps[group[k]].active = false;
        ++removed;
      }
      for (auto& app : scene.apps) {
        if (std::find(group.begin() + 1, group.end(), app.parent) != group.end()) app.parent = group.front();
      }
    }
    scene.compact();
    removed_total += removed;
    if (removed == 0) break;
  }
  return removed_total;
}

int radius_filter(Scene& scene, const StructureGraph& graph, const DensityConfig& cfg) {
  cfg.validate();
  if (graph.nodes.empty()) return 0;
  const auto adj = graph.adjacency();
  std::vector<bool> seen(graph.nodes.size(), false);
  std::vector<long> parent_stp(scene.stps.size(), -1);
  std::vector<bool> stp_seen(scene.stps.size(), false);

  std::vector<std::size_t> order(graph.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return graph.nodes[a].position.z() < graph.nodes[b].position.z();
  });

  for (std::size_t root : order) {
    if (seen[root]) continue;
    std::vector<std::size_t> queue{root};
    seen[root] = true;
    if (graph.nodes[root].stp >= 0) stp_seen[static_cast<std::size_t>(graph.nodes[root].stp)] = true;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t v = queue[head];
      for (std::size_t u : adj[v]) {
        if (seen[u]) continue;
        seen[u] = true;
        queue.push_back(u);
        const long sv = graph.nodes[v].stp;
        const long su = graph.nodes[u].stp;
        if (su >= 0 && sv >= 0 && su != sv && !stp_seen[static_cast<std::size_t>(su)]) {
          parent_stp[static_cast<std::size_t>(su)] = sv;
        }
        if (su >= 0) stp_seen[static_cast<std::size_t>(su)] = true;
      }
    }
  }

  int removed = 0;
  for (std::size_t s = 0; s < scene.stps.size(); ++s) {
    const long p = parent_stp[s];
    if (p < 0) continue;
    if (scene.stps[s].scales[1] > scene.stps[static_cast<std::size_t>(p)].scales[1] * cfg.radius_growth_max) {
      scene.stps[s].active = false;
      ++removed;
    }
  }
  if (removed > 0) rebind_orphans(scene);
  return removed;
}

namespace {

// The in-plane major axis of a near-circular disk is arbitrary.
bool elongated(const StructurePrimitive& stp, const DensityConfig& cfg) {
  return stp.scales[0] >= (1.0 + cfg.leaf_isotropy_tol) * stp.scales[1];
}

}  // namespace

std::vector<int> cluster_leaf_instances(const Scene& scene, const DensityConfig& cfg) {
  std::vector<std::size_t> leaves;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (scene.stps[i].active && classify(scene.stps[i]) == PrimitiveClass::Leaf) leaves.push_back(i);
  }
  std::vector<int> labels(scene.stps.size(), -1);
  if (leaves.empty()) return labels;

  double radius = cfg.leaf_merge_radius;
  if (!(radius > 0.0)) {
    std::vector<double> majors;
    for (std::size_t i : leaves) majors.push_back(to_disk(scene.stps[i]).major);
    std::nth_element(majors.begin(), majors.begin() + static_cast<std::ptrdiff_t>(majors.size() / 2), majors.end());
    radius = 2.0 * majors[majors.size() / 2];
  }

  std::vector<std::pair<std::size_t, std::size_t>> links;
  for (std::size_t a = 0; a < leaves.size(); ++a) {
    const Disk da = to_disk(scene.stps[leaves[a]]);
    for (std::size_t b = a + 1; b < leaves.size(); ++b) {
      const Disk db = to_disk(scene.stps[leaves[b]]);
      if ((da.center - db.center).norm() > radius) continue;
      if (line_angle(da.normal, db.normal) > cfg.leaf_angle_max) continue;
      const bool oriented = elongated(scene.stps[leaves[a]], cfg) && elongated(scene.stps[leaves[b]], cfg);
      if (oriented && line_angle(da.e1, db.e1) > cfg.leaf_angle_max) continue;
      links.emplace_back(a, b);
    }
  }
  const auto root = components(leaves.size(), links);
  std::vector<int> root_label(leaves.size(), -1);
  int next = 0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    if (root_label[root[k]] < 0) root_label[root[k]] = next++;
    labels[leaves[k]] = root_label[root[k]];
  }
  return labels;
}

}  // namespace plantprim
