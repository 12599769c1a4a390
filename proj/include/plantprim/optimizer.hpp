#pragma once

#include "plantprim/cloud.hpp"
#include "plantprim/density.hpp"
#include "plantprim/init.hpp"
#include "plantprim/losses.hpp"
#include "plantprim/structgraph.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace plantprim {

enum class UpdateRule { GradientDescent, Adam };

/// Per-parameter-class step sizes. Center rates are multiplied by the scene
/// extent when `relative_to_scene` is set.
struct LearningRates {
  double stp_center = 1e-2;
  double stp_rotation = 1e-2;
  double stp_scale = 5e-3;
  double stp_logit = 5.0;
  double app_center = 1e-2;
  double app_color = 1e-2;
  double app_feature = 1e-2;
  bool relative_to_scene = true;
};

struct Schedule {
  int warmup_steps = 500;
  int total_steps = 3000;
  int densify_stop_step = 1500;
  // First step at which each term contributes; -1 picks the stage default
  // (fit from 0, bind/sem/op/cls after warm-up, graph/lap after densify stop).
  std::array<int, kLossTermCount> activation{-1, -1, -1, -1, -1, -1, -1};
  int graph_rebuild_interval = 50;
  UpdateRule rule = UpdateRule::GradientDescent;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-15;
  double lr_final_fraction = 0.05;  // exponential decay of all rates down to this fraction
  // Largest StP center move per step as a fraction of its s1; 0 disables.
  double max_center_step = 0.1;
  // Floor on s3 as a fraction of s2. Only the overlap kernel sees s3, and a
  // collapsed s3 makes it blow up under rotation; 0 disables.
  double min_thickness_ratio = 0.25;
  LearningRates lr;

  int activation_step(LossTerm term) const;
  void validate() const;
};

/// Weights with every term not yet active at step t switched off.
LossWeights gated_weights(const LossWeights& weights, const Schedule& schedule, int t);

/// Applies one update from precomputed gradients. Keeps optional moment state
/// for Adam; the state is dropped whenever the scene's primitive counts change.
class Optimizer {
 public:
  Optimizer(Schedule schedule, double scene_scale);

  void apply(Scene& scene, const Gradients& grad, int t);

  /// Gated loss evaluation followed by apply().
  LossReport step(Scene& scene, const LossContext& ctx, const LossWeights& weights, int t);

  void reset();
  double rate_multiplier(int t) const;

 private:
  Schedule schedule_;
  double scene_scale_;
  Gradients m_;
  Gradients v_;
  long moment_steps_ = 0;
};

struct RunConfig {
  InitConfig init;
  LossWeights weights;
  Schedule schedule;
  DensityConfig density;
  GraphConfig graph;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LogRecord {
  int step = 0;
  std::string stage;
  std::array<double, kLossTermCount> values{};
  double total = 0.0;
  std::size_t stps = 0;
  std::size_t apps = 0;
  std::size_t branch_stps = 0;
  std::size_t graph_edges = 0;
};

struct RunResult {
  Scene scene;
  StructureGraph graph;
  std::vector<int> instances;  // per StP, -1 for branch
  std::vector<LogRecord> history;
  std::vector<std::string> warnings;
};

/// init -> warm-up -> joint stage with density control -> merge / radius
/// filter and structure stage -> final merge, graph and leaf clustering.
RunResult run(const PlantCloud& cloud, const SemanticReference* semantic, const RunConfig& cfg,
              const std::function<void(const LogRecord&)>& on_step = {});

}  // namespace plantprim
