#include "plantprim/structgraph.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <string>

namespace plantprim {

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<int> rank_;
};

Vec3 endpoint_of(const StructurePrimitive& stp, int end) {
  return stp.center + (end == 0 ? 1.0 : -1.0) * stp.scales[0] * stp.axis(0);
}

Vec3 node_position(const Scene& scene, const GraphNode& node) {
  if (node.stp < 0 || static_cast<std::size_t>(node.stp) >= scene.stps.size()) return node.position;
  return endpoint_of(scene.stps[static_cast<std::size_t>(node.stp)], node.end);
}

void accumulate_node(Gradients& grad, const Scene& scene, const GraphNode& node, const Vec3& dp) {
  if (node.stp < 0 || static_cast<std::size_t>(node.stp) >= scene.stps.size()) return;
  const auto idx = static_cast<std::size_t>(node.stp);
  accumulate_endpoint(grad.stp[idx], scene.stps[idx], node.end == 0 ? 1.0 : -1.0, dp);
}

}  // namespace

std::size_t StructureGraph::count(EdgeKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [&](const GraphEdge& e) { return e.kind == kind; }));
}

std::vector<std::vector<std::size_t>> StructureGraph::adjacency() const {
  std::vector<std::vector<std::size_t>> adj(nodes.size());
  for (const auto& e : edges) {
    adj[e.i].push_back(e.j);
    adj[e.j].push_back(e.i);
  }
  return adj;
}

bool StructureGraph::is_valid_forest() const {
  DisjointSet ds(nodes.size());
  std::vector<int> inner_per_stp;
  for (const auto& e : edges) {
    if (e.i == e.j || e.i >= nodes.size() || e.j >= nodes.size() || !(e.radius > 0.0)) return false;
    if (!ds.unite(e.i, e.j)) return false;
    if (e.kind == EdgeKind::Inner && nodes[e.i].stp >= 0) {
      if (nodes[e.i].stp != nodes[e.j].stp) return false;
      const auto s = static_cast<std::size_t>(nodes[e.i].stp);
      if (inner_per_stp.size() <= s) inner_per_stp.resize(s + 1, 0);
      ++inner_per_stp[s];
    }
  }
  for (const auto& n : nodes) {
    if (n.stp < 0) continue;
    const auto s = static_cast<std::size_t>(n.stp);
    if (s >= inner_per_stp.size() || inner_per_stp[s] != 1) return false;
  }
  return true;
}

void StructureGraph::update_positions(const Scene& scene) {
  for (auto& n : nodes) n.position = node_position(scene, n);
}

void GraphConfig::validate() const {
  if (knn_k < 1 || samples < 1) throw InvalidArgument("graph: knn_k and samples must be >= 1");
  if (gamma_tan < 0.0 || gamma_occ < 0.0) throw InvalidArgument("graph: penalty gains must be non-negative");
}

std::pair<Vec3, Vec3> stp_endpoints(const StructurePrimitive& stp) {
  if (classify(stp) != PrimitiveClass::Branch) {
    throw InvalidArgument("stp_endpoints: primitive is classified as a leaf");
  }
  return {endpoint_of(stp, 0), endpoint_of(stp, 1)};
}

double axis_penalty(const Vec3& pi, const Vec3& pj, const Vec3& ui, const Vec3& uj, double gamma_tan) {
  const Vec3 d = pi - pj;
  const double len = d.norm();
  if (len == 0.0) return 1.0 + gamma_tan;
  const Vec3 t = d / len;
  const double ci = std::abs(t.dot(ui));
  const double cj = std::abs(t.dot(uj));
  return 1.0 + gamma_tan * (1.0 - 0.5 * (ci + cj));
}

double void_penalty(const Vec3& pi, const Vec3& pj, const KdTree& app_index, double rho_occ, int theta, int samples,
                    double gamma_occ) {
  int sparse = 0;
  for (int k = 0; k < samples; ++k) {
    const double t = (k + 0.5) / samples;
    const Vec3 q = pi + t * (pj - pi);
    if (app_index.count_within(q, rho_occ) < static_cast<std::size_t>(theta)) ++sparse;
  }
  return 1.0 + gamma_occ * static_cast<double>(sparse) / samples;
}

std::vector<std::size_t> branch_indices(const Scene& scene) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (scene.stps[i].active && classify(scene.stps[i]) == PrimitiveClass::Branch) out.push_back(i);
  }
  return out;
}

double resolve_rho_occ(const Scene& scene, const std::vector<std::size_t>& branch_stps, const GraphConfig& cfg) {
  if (cfg.rho_occ > 0.0) return cfg.rho_occ;
  std::vector<double> radii;
  for (std::size_t i : branch_stps) radii.push_back(scene.stps[i].scales[1]);
  if (radii.empty()) return 1.0;
  std::nth_element(radii.begin(), radii.begin() + static_cast<std::ptrdiff_t>(radii.size() / 2), radii.end());
  return 2.0 * radii[radii.size() / 2];
}

StructureGraph endpoint_skeleton(const Scene& scene, const std::vector<std::size_t>& branch_stps) {
  StructureGraph g;
  for (std::size_t s : branch_stps) {
    const auto& stp = scene.stps[s];
    const std::size_t top = g.nodes.size();
    g.nodes.push_back(GraphNode{endpoint_of(stp, 0), static_cast<long>(s), 0});
    g.nodes.push_back(GraphNode{endpoint_of(stp, 1), static_cast<long>(s), 1});
    g.edges.push_back(GraphEdge{top, top + 1, EdgeKind::Inner, stp.scales[1], 0.0});
  }
  return g;
}

std::vector<GraphEdge> candidate_edges(const Scene& scene, const std::vector<std::size_t>& branch_stps,
                                       const GraphConfig& cfg) {
  cfg.validate();
  const StructureGraph skel = endpoint_skeleton(scene, branch_stps);
  std::vector<Vec3> positions;
  positions.reserve(skel.nodes.size());
  for (const auto& n : skel.nodes) positions.push_back(n.position);
  const KdTree node_tree(positions);

  std::vector<Vec3> app_centers;
  app_centers.reserve(scene.apps.size());
  for (const auto& a : scene.apps) app_centers.push_back(a.center);
  const KdTree app_tree(app_centers);
  const double rho = resolve_rho_occ(scene, branch_stps, cfg);

  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < skel.nodes.size(); ++i) {
    // Query enough neighbors to still have knn_k after skipping the sibling endpoint.
    std::size_t taken = 0;
    for (const auto& hit : node_tree.knn(positions[i], static_cast<std::size_t>(cfg.knn_k) + 2)) {
      if (hit.index == i || skel.nodes[hit.index].stp == skel.nodes[i].stp) continue;
      if (taken++ >= static_cast<std::size_t>(cfg.knn_k)) break;
      pairs.emplace(std::min(i, hit.index), std::max(i, hit.index));
    }
  }

  std::vector<GraphEdge> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    const auto& si = scene.stps[static_cast<std::size_t>(skel.nodes[i].stp)];
    const auto& sj = scene.stps[static_cast<std::size_t>(skel.nodes[j].stp)];
    const double d = (positions[i] - positions[j]).norm();
    const double pa = axis_penalty(positions[i], positions[j], si.axis(0), sj.axis(0), cfg.gamma_tan);
    const double po = app_tree.empty() ? 1.0 + cfg.gamma_occ
                                       : void_penalty(positions[i], positions[j], app_tree, rho, cfg.theta,
                                                      cfg.samples, cfg.gamma_occ);
    out.push_back(GraphEdge{i, j, EdgeKind::Cross, 0.5 * (si.scales[1] + sj.scales[1]), edge_cost(d, pa, po)});
  }
  std::stable_sort(out.begin(), out.end(), [](const GraphEdge& a, const GraphEdge& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  return out;
}

StructureGraph build_graph(const Scene& scene, const std::vector<std::size_t>& branch_stps, const GraphConfig& cfg) {
  if (branch_stps.empty()) {
    throw InvalidArgument("build_graph: no branch structure primitives");
  }
  StructureGraph g = endpoint_skeleton(scene, branch_stps);
  DisjointSet ds(g.nodes.size());
  for (const auto& e : g.edges) ds.unite(e.i, e.j);
  for (const auto& e : candidate_edges(scene, branch_stps, cfg)) {
    if (ds.unite(e.i, e.j)) g.edges.push_back(e);
  }
  return g;
}

StructureGraph build_graph(const Scene& scene, const GraphConfig& cfg) {
  return build_graph(scene, branch_indices(scene), cfg);
}

double graph_loss(const Scene& scene, const StructureGraph& graph, Gradients* grad, double weight) {
  const std::size_t n_cross = graph.count(EdgeKind::Cross);
  if (n_cross == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(n_cross);
  double total = 0.0;
  for (const auto& e : graph.edges) {
    if (e.kind != EdgeKind::Cross) continue;
    const Vec3 d = node_position(scene, graph.nodes[e.i]) - node_position(scene, graph.nodes[e.j]);
    const double len = d.norm();
    total += len;
    if (grad != nullptr && len > 0.0) {
      const Vec3 g = weight * inv * d / len;
      accumulate_node(*grad, scene, graph.nodes[e.i], g);
      accumulate_node(*grad, scene, graph.nodes[e.j], -g);
    }
  }
  return total * inv;
}

double laplacian_loss(const Scene& scene, const StructureGraph& graph, Gradients* grad, double weight) {
  if (graph.nodes.empty()) return 0.0;
  const auto adj = graph.adjacency();
  std::vector<Vec3> pos;
  pos.reserve(graph.nodes.size());
  for (const auto& n : graph.nodes) pos.push_back(node_position(scene, n));
  const double inv = 1.0 / static_cast<double>(graph.nodes.size());
  double total = 0.0;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (adj[i].empty()) continue;
    Vec3 mean = Vec3::Zero();
    for (std::size_t j : adj[i]) mean += pos[j];
    const double deg = static_cast<double>(adj[i].size());
    mean /= deg;
    const Vec3 r = pos[i] - mean;
    total += r.squaredNorm();
    if (grad == nullptr) continue;
    const Vec3 g = weight * inv * 2.0 * r;
    accumulate_node(*grad, scene, graph.nodes[i], g);
    for (std::size_t j : adj[i]) accumulate_node(*grad, scene, graph.nodes[j], -g / deg);
  }
  return total * inv;
}

std::vector<std::vector<std::size_t>> reduced_topology(const StructureGraph& graph) {
  std::vector<std::set<std::size_t>> adj(graph.nodes.size());
  for (const auto& e : graph.edges) {
    adj[e.i].insert(e.j);
    adj[e.j].insert(e.i);
  }
  std::vector<bool> alive(graph.nodes.size(), true);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t v = 0; v < adj.size(); ++v) {
      if (!alive[v] || adj[v].size() != 2) continue;
      const std::size_t a = *adj[v].begin();
      const std::size_t b = *std::next(adj[v].begin());
      if (adj[a].count(b) != 0) continue;  // would create a multi-edge (cycle of 3)
      adj[a].erase(v);
      adj[b].erase(v);
      adj[a].insert(b);
      adj[b].insert(a);
      adj[v].clear();
      alive[v] = false;
      changed = true;
    }
  }
  std::vector<std::size_t> remap(adj.size(), 0);
  std::size_t next = 0;
  for (std::size_t v = 0; v < adj.size(); ++v) {
    if (alive[v]) remap[v] = next++;
  }
  std::vector<std::vector<std::size_t>> out(next);
  for (std::size_t v = 0; v < adj.size(); ++v) {
    if (!alive[v]) continue;
    for (std::size_t u : adj[v]) out[remap[v]].push_back(remap[u]);
    std::sort(out[remap[v]].begin(), out[remap[v]].end());
  }
  return out;
}

bool isomorphic(const std::vector<std::vector<std::size_t>>& a, const std::vector<std::vector<std::size_t>>& b) {
  const std::size_t n = a.size();
  if (n != b.size()) return false;
  auto degrees = [](const std::vector<std::vector<std::size_t>>& g) {
    std::vector<std::size_t> d;
    for (const auto& row : g) d.push_back(row.size());
    std::sort(d.begin(), d.end());
    return d;
  };
  if (degrees(a) != degrees(b)) return false;
  if (n > 10) {
    throw InvalidArgument("isomorphic: exhaustive check limited to 10 nodes, got " + std::to_string(n));
  }
  auto edge_set = [](const std::vector<std::vector<std::size_t>>& g) {
    std::set<std::pair<std::size_t, std::size_t>> s;
    for (std::size_t v = 0; v < g.size(); ++v) {
      for (std::size_t u : g[v]) s.emplace(std::min(u, v), std::max(u, v));
    }
    return s;
  };
  const auto eb = edge_set(b);
  const auto ea = edge_set(a);
  if (ea.size() != eb.size()) return false;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool ok = true;
    for (const auto& [u, v] : ea) {
      const std::size_t pu = perm[u];
      const std::size_t pv = perm[v];
      if (eb.count({std::min(pu, pv), std::max(pu, pv)}) == 0) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

}  // namespace plantprim
