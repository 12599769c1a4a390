#pragma once

#include "plantprim/cloud.hpp"
#include "plantprim/losses.hpp"
#include "plantprim/structgraph.hpp"

#include <cstdint>
#include <numbers>
#include <vector>

namespace plantprim {

/// Recursive cylinder tree with elliptical leaves at the terminal tips. The
/// root segment starts at the origin and grows along +z.
struct SynthSpec {
  int depth = 1;
  int branching_factor = 2;
  double trunk_length = 1.0;
  double trunk_radius = 0.04;
  double length_taper = 0.8;
  double radius_taper = 0.75;
  double branch_angle = 35.0 * std::numbers::pi / 180.0;  // child axis vs parent axis
  int leaves_per_terminal = 2;
  double leaf_major = 0.25;  // ellipse semi-axes
  double leaf_minor = 0.1;
  double leaf_tilt = 60.0 * std::numbers::pi / 180.0;  // leaf axis vs terminal branch axis
  double petiole_length = 0.1;  // unsampled stalk between the tip and the leaf base
  double points_per_area = 2500.0;
  Vec3 branch_color{0.45, 0.30, 0.15};
  Vec3 leaf_color{0.20, 0.60, 0.20};
  double color_noise = 0.03;
  int feature_dim = 8;
  double feature_noise = 0.2;
  double occlusion_drop = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSegment {
  Vec3 start;
  Vec3 end;
  double radius;
  int depth;
};

struct SynthLeaf {
  Vec3 center;
  Vec3 major_axis;
  Vec3 normal;
  double major;
  double minor;
};

struct SynthPlant {
  PlantCloud cloud;
  StructureGraph gt_graph;  // stp = -1 nodes at segment endpoints, one edge per segment
  int leaf_instances = 0;
  SemanticReference semantic;
  std::vector<SynthSegment> segments;
  std::vector<SynthLeaf> leaves;
};

/// Fixed pair of unit class reference features for dimension d.
SemanticReference synth_semantic_reference(int dim);

SynthPlant generate(const SynthSpec& spec);

/// Small random scene with mixed classes, ApPs scattered around their parents and a
/// matching noisy cloud; used for gradient checks.
struct RandomScene {
  Scene scene;
  PlantCloud cloud;
  SemanticReference semantic;
};

RandomScene random_scene(std::uint64_t seed, int stps = 6, int apps_per_stp = 6, int feature_dim = 4);

/// Shorthand for the three-segment, four-leaf plant used across the test suite.
SynthSpec y_junction_spec(std::uint64_t seed, double feature_noise = 0.2, double occlusion_drop = 0.2);

}  // namespace plantprim
