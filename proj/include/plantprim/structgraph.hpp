#pragma once

#include "plantprim/gradients.hpp"
#include "plantprim/primitives.hpp"
#include "plantprim/spatial.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace plantprim {

enum class EdgeKind { Inner, Cross };

struct GraphNode {
  Vec3 position = Vec3::Zero();
  long stp = -1;  // owning StP index, -1 for nodes not tied to a primitive
  int end = 0;    // 0 = top (mu + s1 u), 1 = bottom (mu - s1 u)
};

struct GraphEdge {
  std::size_t i = 0;
  std::size_t j = 0;
  EdgeKind kind = EdgeKind::Inner;
  double radius = 0.0;
  double cost = 0.0;  // reweighted cost for cross edges, 0 for inner edges
};

/// Endpoint graph: one inner edge per branch StP plus MST cross edges.
struct StructureGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  bool empty() const { return nodes.empty(); }
  std::size_t count(EdgeKind kind) const;
  std::vector<std::vector<std::size_t>> adjacency() const;
  /// Acyclic, no self loops, positive radii, one inner edge per referenced StP.
  bool is_valid_forest() const;
  /// Refreshes node positions from the scene's current endpoints.
  void update_positions(const Scene& scene);
};

struct GraphConfig {
  int knn_k = 6;
  double gamma_tan = 2.0;
  double gamma_occ = 4.0;
  double rho_occ = 0.0;  // <= 0: twice the median branch radius
  int theta = 3;
  int samples = 8;

  void validate() const;
};

std::pair<Vec3, Vec3> stp_endpoints(const StructurePrimitive& stp);

double axis_penalty(const Vec3& pi, const Vec3& pj, const Vec3& ui, const Vec3& uj, double gamma_tan);

/// `app_index` is a k-d tree over ApP centers.
double void_penalty(const Vec3& pi, const Vec3& pj, const KdTree& app_index, double rho_occ, int theta, int samples,
                    double gamma_occ);

inline double edge_cost(double distance, double pen_axis, double pen_occ) { return distance * pen_axis * pen_occ; }

/// Graph nodes for the given StPs (two per StP, top then bottom) and their inner edges.
StructureGraph endpoint_skeleton(const Scene& scene, const std::vector<std::size_t>& branch_stps);

/// Reweighted candidate cross edges from the endpoint KNN graph, sorted by
/// (cost, i, j). Node indices refer to endpoint_skeleton(scene, branch_stps).
std::vector<GraphEdge> candidate_edges(const Scene& scene, const std::vector<std::size_t>& branch_stps,
                                       const GraphConfig& cfg);

/// Kruskal over candidate edges with each StP's two endpoints pre-merged.
/// A disconnected candidate graph yields a spanning forest.
StructureGraph build_graph(const Scene& scene, const std::vector<std::size_t>& branch_stps, const GraphConfig& cfg);

/// build_graph over every active branch-classified StP. Throws InvalidArgument
/// when there are none.
StructureGraph build_graph(const Scene& scene, const GraphConfig& cfg);

std::vector<std::size_t> branch_indices(const Scene& scene);

/// Resolved occupancy radius for a scene.
double resolve_rho_occ(const Scene& scene, const std::vector<std::size_t>& branch_stps, const GraphConfig& cfg);

/// Mean cross-edge length. Topology is frozen; gradients flow to endpoint
/// parameters (mu, s1, v1) scaled by `weight`.
double graph_loss(const Scene& scene, const StructureGraph& graph, Gradients* grad = nullptr, double weight = 1.0);

/// Mean over nodes of |p_i - mean of neighbors|^2 on E_in and E_cross.
double laplacian_loss(const Scene& scene, const StructureGraph& graph, Gradients* grad = nullptr, double weight = 1.0);

/// Tree shape with degree-2 chains suppressed: adjacency over the remaining nodes.
std::vector<std::vector<std::size_t>> reduced_topology(const StructureGraph& graph);

/// Exhaustive isomorphism test for small undirected graphs (adjacency lists).
bool isomorphic(const std::vector<std::vector<std::size_t>>& a, const std::vector<std::vector<std::size_t>>& b);

}  // namespace plantprim
