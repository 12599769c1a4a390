#pragma once

#include "plantprim/cloud.hpp"
#include "plantprim/gradients.hpp"
#include "plantprim/primitives.hpp"
#include "plantprim/structgraph.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace plantprim {

enum class LossTerm : int { Fit = 0, Bind, Sem, Overlap, Cls, Graph, Lap };
inline constexpr std::size_t kLossTermCount = 7;
inline constexpr std::array<LossTerm, kLossTermCount> kAllLossTerms{
    LossTerm::Fit, LossTerm::Bind, LossTerm::Sem, LossTerm::Overlap, LossTerm::Cls, LossTerm::Graph, LossTerm::Lap};

std::string_view term_name(LossTerm term);

/// Per-term weights, on/off gates, and the semantic softmax temperature.
struct LossWeights {
  std::array<double, kLossTermCount> weight{1.0, 1.0, 0.2, 0.05, 0.1, 1.0, 0.1};
  std::array<bool, kLossTermCount> enabled{true, true, true, true, true, true, true};
  double tau = 0.1;
  // In the total, L_op enters divided by the active StP count so its pull per
  // primitive does not grow with the scene like a raw sum does.
  bool overlap_mean = true;

  double& operator[](LossTerm t) { return weight[static_cast<std::size_t>(t)]; }
  double operator[](LossTerm t) const { return weight[static_cast<std::size_t>(t)]; }
  bool on(LossTerm t) const { return enabled[static_cast<std::size_t>(t)]; }
  void set_on(LossTerm t, bool v) { enabled[static_cast<std::size_t>(t)] = v; }

  static LossWeights zeros();
  void validate() const;
};

struct SemanticReference {
  VecX branch;
  VecX leaf;

  static SemanticReference normalized(VecX branch, VecX leaf);
  void validate(std::size_t dim) const;
};

/// Mean ApP colors of the current hard branch / leaf split.
struct ClassColorMeans {
  Vec3 branch = Vec3::Zero();
  Vec3 leaf = Vec3::Zero();
  bool valid = false;
};

/// Everything a loss evaluation treats as constant: neighbor sets,
/// nearest-neighbor pairings, the frozen graph and the class color means.
struct LossContext {
  const PlantCloud* cloud = nullptr;
  const SemanticReference* semantic = nullptr;
  const StructureGraph* graph = nullptr;
  ClassColorMeans class_means;
  std::vector<std::vector<std::size_t>> overlap_neighbors;
  std::vector<std::size_t> cloud_to_app;
  std::vector<std::size_t> app_to_cloud;
};

inline constexpr int kOverlapNeighbors = 3;

/// Builds the neighbor sets and pairings for the current scene.
LossContext build_context(const Scene& scene, const PlantCloud* cloud, const SemanticReference* semantic,
                          const StructureGraph* graph, const ClassColorMeans& class_means);

/// Recomputes class means from hard labels; keeps `previous` when a class is empty.
ClassColorMeans compute_class_means(const Scene& scene, const ClassColorMeans& previous = {});

struct LossReport {
  std::array<double, kLossTermCount> values{};
  double total = 0.0;
  Gradients grad;
  std::vector<std::string> warnings;

  double operator[](LossTerm t) const { return values[static_cast<std::size_t>(t)]; }
};

/// max(0, |q - q_axis| - r) against the unbounded axis line.
double dist_point_cylinder(const Vec3& q, const Cylinder& cy);

/// Plane distance inside the ellipse, sqrt(d_plane^2 + d_edge^2) outside,
/// where d_edge is the in-plane distance to the nearest boundary point.
double dist_point_disk(const Vec3& q, const Disk& di);

/// Normalized elliptical radius of q's in-plane projection.
double disk_rho(const Vec3& q, const Disk& di);

double binding_loss(const Scene& scene, Gradients* grad = nullptr, double weight = 1.0);

double overlap_loss(const Scene& scene, const std::vector<std::vector<std::size_t>>& neighbors,
                    Gradients* grad = nullptr, double weight = 1.0);

/// k nearest active StPs (by center) for every active StP.
std::vector<std::vector<std::size_t>> overlap_neighbors(const Scene& scene, int k = kOverlapNeighbors);

/// Color term plus confidence term.
double classification_loss(const Scene& scene, const ClassColorMeans& means, Gradients* grad = nullptr,
                           double weight = 1.0);
double confidence_loss(const Scene& scene, Gradients* grad = nullptr, double weight = 1.0);

/// Mean feature of the bound ApPs.
VecX pooled_feature(const Scene& scene, const std::vector<std::size_t>& bound);

struct SemanticLikelihood {
  double branch = 0.5;
  double leaf = 0.5;
  bool degenerate = false;  // zero-norm pooled feature
};

SemanticLikelihood semantic_likelihood(const VecX& pooled, const SemanticReference& ref, double tau);

double semantic_loss(const Scene& scene, const SemanticReference& ref, double tau, Gradients* grad = nullptr,
                     double weight = 1.0, std::vector<std::string>* warnings = nullptr);

/// Symmetric point-to-ApP fit: half the sum of the two directed means of
/// (distance + squared color residual + squared feature residual).
double data_fit_loss(const Scene& scene, const PlantCloud& cloud, const std::vector<std::size_t>& cloud_to_app,
                     const std::vector<std::size_t>& app_to_cloud, Gradients* grad = nullptr, double weight = 1.0);

/// Convenience overload that computes the pairings itself.
double data_fit_loss(const Scene& scene, const PlantCloud& cloud, Gradients* grad = nullptr, double weight = 1.0);

/// Weighted sum of enabled terms with accumulated, finalized gradients.
LossReport total_loss(const Scene& scene, const LossContext& ctx, const LossWeights& weights);

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // parameters sitting on a non-smooth point
};

/// Central differences over a seeded random subsample of scalar parameters,
/// with the context held fixed. Parameters whose one-sided slopes disagree
/// (kinks of max(0,.), rho = 1, |.| at 0) are excluded.
FiniteDiffResult finite_diff_check(const Scene& scene, const LossContext& ctx, const LossWeights& weights, double h,
                                   std::size_t max_params = 400, std::uint64_t seed = 0);

/// finite_diff_check for each term in isolation (weight 1, all others off).
std::array<FiniteDiffResult, kLossTermCount> check_term_gradients(const Scene& scene, const LossContext& ctx, double tau,
                                                                  double h, std::size_t max_params = 400,
                                                                  std::uint64_t seed = 0);

/// Same procedure for an arbitrary scalar function of a parameter vector.
FiniteDiffResult finite_diff_check(const std::function<double(const VecX&)>& f, const VecX& x, const VecX& analytic,
                                   double h);

}  // namespace plantprim
