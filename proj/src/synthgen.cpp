#include "plantprim/synthgen.hpp"

#include <cmath>
#include <random>

namespace plantprim {

namespace {

using Rng = std::mt19937_64;

struct Sampler {
  const SynthSpec& spec;
  Rng rng;
  std::normal_distribution<double> normal{0.0, 1.0};
  std::uniform_real_distribution<double> uniform{0.0, 1.0};
  SemanticReference ref;
  PlantCloud cloud;

  Vec3 noisy_color(const Vec3& base) {
    Vec3 c = base;
    for (int k = 0; k < 3; ++k) c[k] += spec.color_noise * normal(rng);
    return c.cwiseMax(0.0).cwiseMin(1.0);
  }

  VecX noisy_feature(const VecX& base) {
    VecX f = base;
    for (Eigen::Index k = 0; k < f.size(); ++k) f[k] += spec.feature_noise * normal(rng);
    const double n = f.norm();
    return n > 0.0 ? VecX(f / n) : base;
  }

  void add(const Vec3& p, bool branch, int instance) {
    cloud.points.push_back(p);
    cloud.colors.push_back(noisy_color(branch ? spec.branch_color : spec.leaf_color));
    if (spec.feature_dim > 0) cloud.features.push_back(noisy_feature(branch ? ref.branch : ref.leaf));
    cloud.gt_branch.push_back(branch);
    cloud.gt_instance.push_back(instance);
  }

  void sample_segment(const SynthSegment& seg) {
    const Vec3 axis_vec = seg.end - seg.start;
    const double length = axis_vec.norm();
    const Vec3 u = axis_vec / length;
    const Mat3 frame = frame_from_normal(u, any_orthogonal(u));
    const auto n = static_cast<long>(std::llround(spec.points_per_area * 2.0 * std::numbers::pi * seg.radius * length));
    for (long i = 0; i < n; ++i) {
      const double t = uniform(rng) * length;
      const double phi = uniform(rng) * 2.0 * std::numbers::pi;
      const bool keep = uniform(rng) >= spec.occlusion_drop;
      if (!keep) continue;
      const Vec3 p = seg.start + t * u + seg.radius * (std::cos(phi) * frame.col(0) + std::sin(phi) * frame.col(1));
      add(p, true, -1);
    }
  }

  void sample_leaf(const SynthLeaf& leaf, int instance) {
    const Vec3 e2 = leaf.normal.cross(leaf.major_axis).normalized();
    const auto n = static_cast<long>(std::llround(spec.points_per_area * std::numbers::pi * leaf.major * leaf.minor));
    for (long i = 0; i < n; ++i) {
      const double r = std::sqrt(uniform(rng));
      const double phi = uniform(rng) * 2.0 * std::numbers::pi;
      add(leaf.center + r * (leaf.major * std::cos(phi) * leaf.major_axis + leaf.minor * std::sin(phi) * e2), false,
          instance);
    }
  }
};

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle) { return exp_so3(angle * axis.normalized()) * v; }

}  // namespace

void SynthSpec::validate() const {
  if (depth < 0) throw InvalidArgument("synth: depth must be >= 0");
  if (branching_factor < 1) throw InvalidArgument("synth: branching_factor must be >= 1");
  if (!(length_taper > 0.0 && length_taper <= 1.0) || !(radius_taper > 0.0 && radius_taper <= 1.0)) {
    throw InvalidArgument("synth: taper ratios must be in (0,1]");
  }
  if (!(trunk_length > 0.0) || !(trunk_radius > 0.0)) throw InvalidArgument("synth: trunk size must be positive");
  if (!(petiole_length >= 0.0)) throw InvalidArgument("synth: petiole_length must be >= 0");
  if (leaves_per_terminal < 0) throw InvalidArgument("synth: leaves_per_terminal must be >= 0");
  if (leaves_per_terminal > 0 && !(leaf_major >= leaf_minor && leaf_minor > 0.0)) {
    throw InvalidArgument("synth: need leaf_major >= leaf_minor > 0");
  }
  if (!(points_per_area > 0.0)) throw InvalidArgument("synth: points_per_area must be positive");
  if (!(color_noise >= 0.0) || !(feature_noise >= 0.0)) throw InvalidArgument("synth: noise must be >= 0");
  if (feature_dim < 0) throw InvalidArgument("synth: feature_dim must be >= 0");
  if (!(occlusion_drop >= 0.0 && occlusion_drop < 1.0)) throw InvalidArgument("synth: occlusion_drop must be in [0,1)");
}

SemanticReference synth_semantic_reference(int dim) {
  if (dim <= 0) return {};
  Rng rng(0x5e3a471cULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  VecX b(dim), l(dim);
  for (int k = 0; k < dim; ++k) b[k] = normal(rng);
  for (int k = 0; k < dim; ++k) l[k] = normal(rng);
  b.normalize();
  if (dim > 1) l -= l.dot(b) * b;  // orthogonal references: the two classes are maximally separated
  return SemanticReference::normalized(b, l);
}

SynthPlant generate(const SynthSpec& spec) {
  spec.validate();
  Sampler sampler{spec, Rng(spec.seed), {}, {}, synth_semantic_reference(spec.feature_dim), {}};
  Rng& rng = sampler.rng;
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  SynthPlant plant;
  plant.semantic = sampler.ref;

  struct Pending {
    Vec3 start;
    Vec3 dir;
    Vec3 side;  // reference direction perpendicular to dir for azimuths
    double length;
    double radius;
    int depth;
    std::size_t start_node;
  };
  auto& nodes = plant.gt_graph.nodes;
  nodes.push_back(GraphNode{Vec3::Zero(), -1, 0});
  std::vector<Pending> stack{{Vec3::Zero(), Vec3::UnitZ(), Vec3::UnitX(), spec.trunk_length, spec.trunk_radius, 0, 0}};
  std::vector<std::pair<Pending, std::size_t>> terminals;

  while (!stack.empty()) {
    const Pending cur = stack.back();
    stack.pop_back();
    const Vec3 end = cur.start + cur.length * cur.dir;
    const std::size_t end_node = nodes.size();
    nodes.push_back(GraphNode{end, -1, 0});
    plant.gt_graph.edges.push_back(GraphEdge{cur.start_node, end_node, EdgeKind::Inner, cur.radius, 0.0});
    plant.segments.push_back(SynthSegment{cur.start, end, cur.radius, cur.depth});
    if (cur.depth == spec.depth) {
      terminals.emplace_back(cur, end_node);
      continue;
    }
    const double phase = 0.3 * jitter(rng);
    for (int c = spec.branching_factor - 1; c >= 0; --c) {
      const double azimuth = phase + 2.0 * std::numbers::pi * c / spec.branching_factor;
      const Vec3 tilt_axis = rotate_about(cur.side, cur.dir, azimuth).cross(cur.dir).normalized();
      const double angle = spec.branching_factor == 1 ? 0.0 : spec.branch_angle;
      const Vec3 dir = rotate_about(cur.dir, tilt_axis, -angle).normalized();
      Vec3 side = dir.cross(cur.dir);
      side = side.norm() > 1e-9 ? Vec3(side.normalized()) : cur.side;
      stack.push_back({end, dir, side, cur.length * spec.length_taper, cur.radius * spec.radius_taper, cur.depth + 1,
                       end_node});
    }
  }

  for (const auto& seg : plant.segments) sampler.sample_segment(seg);

  int instance = 0;
  for (const auto& [seg, node] : terminals) {
    const Vec3 tip = nodes[node].position;
    for (int k = 0; k < spec.leaves_per_terminal; ++k) {
      // Leaves spread across the branching plane, evenly around the tip.
      const double azimuth = 0.5 * std::numbers::pi + 2.0 * std::numbers::pi * k / spec.leaves_per_terminal +
                             0.35 * jitter(rng);
      const double tilt = spec.leaf_tilt + 0.15 * jitter(rng);
      const Vec3 radial = rotate_about(seg.side, seg.dir, azimuth);
      const Vec3 major = (std::cos(tilt) * seg.dir + std::sin(tilt) * radial).normalized();
      const Vec3 across = seg.dir.cross(major).normalized();
      const double roll = 0.5 * jitter(rng);
      const Vec3 width = rotate_about(across, major, roll);
      const Vec3 normal = major.cross(width).normalized();
      SynthLeaf leaf{tip + (spec.petiole_length + spec.leaf_major) * major, major, normal, spec.leaf_major, spec.leaf_minor};
      sampler.sample_leaf(leaf, instance);
      plant.leaves.push_back(leaf);
      ++instance;
    }
  }
  plant.leaf_instances = instance;
  plant.cloud = std::move(sampler.cloud);
  if (spec.feature_dim == 0) plant.cloud.features.clear();
  return plant;
}

RandomScene random_scene(std::uint64_t seed, int stps, int apps_per_stp, int feature_dim) {
  if (stps < 2 || apps_per_stp < 1 || feature_dim < 1) throw InvalidArgument("random_scene: sizes too small");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  RandomScene out;
  VecX rb(feature_dim), rl(feature_dim);
  for (int k = 0; k < feature_dim; ++k) {
    rb[k] = n(rng);
    rl[k] = n(rng);
  }
  out.semantic = SemanticReference::normalized(rb, rl);

  auto rand_feature = [&] {
    VecX f(feature_dim);
    for (int k = 0; k < feature_dim; ++k) f[k] = n(rng);
    return f;
  };
  for (int i = 0; i < stps; ++i) {
    StructurePrimitive s;
    s.center = Vec3(u(rng), u(rng), u(rng));
    s.rotation = exp_so3(Vec3(3.0 * u(rng), 3.0 * u(rng), 3.0 * u(rng)));
    s.scales = Vec3(0.3 + 0.2 * std::abs(u(rng)), 0.15 + 0.1 * std::abs(u(rng)), 0.05 + 0.05 * std::abs(u(rng)));
    // The first half are branches so the structure terms have a graph to act on.
    s.branch_logit = i < (stps + 1) / 2 ? 0.5 + 1.5 * std::abs(u(rng)) : -0.5 - 1.5 * std::abs(u(rng));
    out.scene.stps.push_back(s);
    for (int a = 0; a < apps_per_stp; ++a) {
      AppearancePrimitive app;
      app.center = s.center + 0.4 * Vec3(u(rng), u(rng), u(rng));
      app.color = Vec3(0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng));
      app.feature = rand_feature();
      app.parent = static_cast<std::size_t>(i);
      out.scene.apps.push_back(std::move(app));
    }
  }
  for (const auto& app : out.scene.apps) {
    out.cloud.points.push_back(app.center + 0.05 * Vec3(n(rng), n(rng), n(rng)));
    out.cloud.colors.push_back(Vec3(0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng)));
    out.cloud.features.push_back(rand_feature());
  }
  return out;
}

SynthSpec y_junction_spec(std::uint64_t seed, double feature_noise, double occlusion_drop) {
  SynthSpec s;
  s.depth = 1;
  s.branching_factor = 2;
  s.leaves_per_terminal = 2;
  s.feature_noise = feature_noise;
  s.occlusion_drop = occlusion_drop;
  s.seed = seed;
  return s;
}

}  // namespace plantprim
