#pragma once

#include "plantprim/primitives.hpp"
#include "plantprim/structgraph.hpp"

#include <numbers>
#include <vector>

namespace plantprim {

struct DensityConfig {
  int max_stps = 256;
  double densify_grad_threshold = 1e-4;  // absolute floor on the mean accumulated gradient norm
  double densify_top_fraction = 0.05;
  double split_min_aspect = 2.0;  // split only when s1 >= this * s2, so halves keep their axis; 0 disables
  double prune_scale_min = 1e-3;
  double prune_opacity_min = 0.05;
  double merge_radius = 0.0;  // <= 0: half the mean branch radius
  double merge_axis_cos_min = 0.95;
  double radius_growth_max = 1.5;
  double stub_aspect_min = 1.5;  // branch StPs with s1 < this * s2 have no usable axis; 0 keeps them
  double leaf_merge_radius = 0.0;  // <= 0: 2x the median leaf disk major radius
  double leaf_angle_max = 30.0 * std::numbers::pi / 180.0;
  // Major axes are compared only when both disks have s1 >= (1 + tol) * s2.
  double leaf_isotropy_tol = 1.0;
  int densify_interval = 100;

  void validate() const;
};

/// Splits StPs whose mean accumulated binding+semantic gradient norm is above
/// the floor and within the top fraction, skipping StPs too stubby to halve
/// (s1 < split_min_aspect * s2). Each split halves the StP along its
/// major axis; bound ApPs go to the nearer child. No-op at the cap. Returns the
/// number of splits.
int densify_stps(Scene& scene, const std::vector<double>& grad_accum, const DensityConfig& cfg);

/// Removes StPs with s1 below prune_scale_min or whose bound ApPs have mean
/// opacity below prune_opacity_min (no bound ApPs counts as zero opacity).
/// Orphaned ApPs are re-parented to the nearest surviving StP surface.
/// Returns the number removed; throws InvalidState if nothing would survive.
int prune_stps(Scene& scene, const DensityConfig& cfg);

/// Merges groups of branch StPs linked by endpoint proximity and axis
/// alignment (transitive closure), repeated until no group changes. Returns
/// the number of StPs removed.
int merge_branch_stps(Scene& scene, const DensityConfig& cfg);

/// Roots every graph component at its lowest (min z) endpoint and deactivates
/// child StPs whose radius exceeds parent radius x radius_growth_max. ApPs of
/// removed StPs are re-parented and the scene compacted; the graph is stale
/// afterwards. Returns the number removed.
int radius_filter(Scene& scene, const StructureGraph& graph, const DensityConfig& cfg);

/// Deactivates branch StPs too stubby to define an axis (s1 < stub_aspect_min
/// * s2) and re-parents their ApPs. Keeps everything if every branch is a stub.
int prune_stub_branches(Scene& scene, const DensityConfig& cfg);

/// Instance label per StP (-1 for branch or inactive StPs), labels numbered
/// 0.. in order of each component's smallest StP index.
std::vector<int> cluster_leaf_instances(const Scene& scene, const DensityConfig& cfg);

/// Distance from q to the StP's explicit surface with the cylinder clamped to
/// its length; used for re-parenting.
double surface_distance(const StructurePrimitive& stp, const Vec3& q);

/// Re-parents ApPs whose parent is inactive to the nearest active StP, then compacts.
void rebind_orphans(Scene& scene);

}  // namespace plantprim
