#include "plantprim/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace plantprim {

int Schedule::activation_step(LossTerm term) const {
  const int explicit_step = activation[static_cast<std::size_t>(term)];
  if (explicit_step >= 0) return explicit_step;
  switch (term) {
    case LossTerm::Fit: return 0;
    case LossTerm::Graph:
    case LossTerm::Lap: return densify_stop_step;
    default: return warmup_steps;
  }
}

void Schedule::validate() const {
  if (!(0 <= warmup_steps && warmup_steps <= densify_stop_step && densify_stop_step <= total_steps)) {
    throw InvalidArgument("schedule: need 0 <= warmup_steps <= densify_stop_step <= total_steps");
  }
  if (graph_rebuild_interval < 1) throw InvalidArgument("schedule: graph_rebuild_interval must be >= 1");
  const double rates[] = {lr.stp_center, lr.stp_rotation, lr.stp_scale, lr.stp_logit,
                          lr.app_center, lr.app_color,    lr.app_feature};
  for (double r : rates) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidArgument("schedule: learning rates must be finite and >= 0");
  }
  if (!(min_thickness_ratio >= 0.0 && min_thickness_ratio <= 1.0)) {
    throw InvalidArgument("schedule: min_thickness_ratio must be in [0,1]");
  }
  if (!(max_center_step >= 0.0)) throw InvalidArgument("schedule: max_center_step must be >= 0");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) {
    throw InvalidArgument("schedule: lr_final_fraction must be in (0,1]");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
    throw InvalidArgument("schedule: invalid Adam parameters");
  }
}

LossWeights gated_weights(const LossWeights& weights, const Schedule& schedule, int t) {
  LossWeights out = weights;
  for (LossTerm term : kAllLossTerms) {
    if (t < schedule.activation_step(term)) out.set_on(term, false);
  }
  return out;
}

Optimizer::Optimizer(Schedule schedule, double scene_scale) : schedule_(std::move(schedule)), scene_scale_(scene_scale) {
  schedule_.validate();
  if (!(scene_scale_ > 0.0)) throw InvalidArgument("optimizer: scene scale must be positive");
}

void Optimizer::reset() {
  m_ = Gradients{};
  v_ = Gradients{};
  moment_steps_ = 0;
}

double Optimizer::rate_multiplier(int t) const {
  if (schedule_.total_steps <= 1) return 1.0;
  const double frac = std::clamp(static_cast<double>(t) / (schedule_.total_steps - 1), 0.0, 1.0);
  return std::pow(schedule_.lr_final_fraction, frac);
}

namespace {

template <typename T>
T adam_direction(T& m, T& v, const T& g, double b1, double b2, double c1, double c2, double eps) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
  return ((m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
}

double adam_direction(double& m, double& v, double g, double b1, double b2, double c1, double c2, double eps) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g * g;
  return (m / c1) / (std::sqrt(v / c2) + eps);
}

}  // namespace

void Optimizer::apply(Scene& scene, const Gradients& grad, int t) {
  if (grad.stp.size() != scene.stps.size() || grad.app.size() != scene.apps.size()) {
    throw InvalidArgument("optimizer: gradient does not match scene");
  }
  const bool adam = schedule_.rule == UpdateRule::Adam;
  if (adam && (m_.stp.size() != scene.stps.size() || m_.app.size() != scene.apps.size())) {
    reset();
  }
  if (adam && moment_steps_ == 0) {
    m_ = Gradients::zeros_like(scene);
    v_ = Gradients::zeros_like(scene);
  }
  const double b1 = schedule_.adam_beta1;
  const double b2 = schedule_.adam_beta2;
  const double eps = schedule_.adam_eps;
  double c1 = 1.0;
  double c2 = 1.0;
  if (adam) {
    ++moment_steps_;
    c1 = 1.0 - std::pow(b1, static_cast<double>(moment_steps_));
    c2 = 1.0 - std::pow(b2, static_cast<double>(moment_steps_));
  }

  const double decay = rate_multiplier(t);
  const double center_scale = schedule_.lr.relative_to_scene ? scene_scale_ : 1.0;
  const LearningRates& lr = schedule_.lr;

  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    auto& s = scene.stps[i];
    if (!s.active) continue;
    const StpGrad& g = grad.stp[i];
    Vec3 dc = g.center, ds = g.scales, dr = g.rotation;
    double dl = g.logit;
    if (adam) {
      StpGrad& m = m_.stp[i];
      StpGrad& v = v_.stp[i];
      dc = adam_direction(m.center, v.center, g.center, b1, b2, c1, c2, eps);
      ds = adam_direction(m.scales, v.scales, g.scales, b1, b2, c1, c2, eps);
      dr = adam_direction(m.rotation, v.rotation, g.rotation, b1, b2, c1, c2, eps);
      dl = adam_direction(m.logit, v.logit, g.logit, b1, b2, c1, c2, eps);
    }
    if (lr.stp_center > 0.0) {
      Vec3 move = decay * lr.stp_center * center_scale * dc;
      const double cap = schedule_.max_center_step * s.scales[0];
      if (cap > 0.0 && move.norm() > cap) move *= cap / move.norm();
      s.center -= move;
    }
    if (lr.stp_scale > 0.0) {
      s.scales -= decay * lr.stp_scale * ds;
      pool_scales(s);
      s.scales = s.scales.cwiseMax(1e-6);
      s.scales[2] = std::max(s.scales[2], schedule_.min_thickness_ratio * s.scales[1]);
    }
    if (lr.stp_rotation > 0.0) s.rotation = orthonormalize(s.rotation * exp_so3(-decay * lr.stp_rotation * dr));
    if (lr.stp_logit > 0.0) s.branch_logit = std::clamp(s.branch_logit - decay * lr.stp_logit * dl, -10.0, 10.0);
  }

  for (std::size_t a = 0; a < scene.apps.size(); ++a) {
    auto& app = scene.apps[a];
    const AppGrad& g = grad.app[a];
    Vec3 dc = g.center, dcol = g.color;
    VecX df = g.feature;
    if (adam) {
      AppGrad& m = m_.app[a];
      AppGrad& v = v_.app[a];
      dc = adam_direction(m.center, v.center, g.center, b1, b2, c1, c2, eps);
      dcol = adam_direction(m.color, v.color, g.color, b1, b2, c1, c2, eps);
      if (g.feature.size() > 0) df = adam_direction(m.feature, v.feature, g.feature, b1, b2, c1, c2, eps);
    }
    if (lr.app_center > 0.0) app.center -= decay * lr.app_center * center_scale * dc;
    if (lr.app_color > 0.0) app.color = (app.color - decay * lr.app_color * dcol).cwiseMax(0.0).cwiseMin(1.0);
    if (lr.app_feature > 0.0 && df.size() == app.feature.size()) app.feature -= decay * lr.app_feature * df;
  }

  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    const auto& s = scene.stps[i];
    if (!s.center.allFinite() || !s.scales.allFinite() || !s.rotation.allFinite() || !std::isfinite(s.branch_logit)) {
      throw InvalidState("optimizer: non-finite structure primitive " + std::to_string(i) + " at step " +
                         std::to_string(t));
    }
  }
  for (std::size_t a = 0; a < scene.apps.size(); ++a) {
    if (!scene.apps[a].center.allFinite() || !scene.apps[a].feature.allFinite()) {
      throw InvalidState("optimizer: non-finite appearance primitive " + std::to_string(a) + " at step " +
                         std::to_string(t));
    }
  }
}

LossReport Optimizer::step(Scene& scene, const LossContext& ctx, const LossWeights& weights, int t) {
  if (t >= schedule_.total_steps) throw InvalidArgument("optimizer: step index beyond total_steps");
  LossReport report = total_loss(scene, ctx, gated_weights(weights, schedule_, t));
  apply(scene, report.grad, t);
  return report;
}

void RunConfig::validate() const {
  init.validate();
  weights.validate();
  schedule.validate();
  density.validate();
  graph.validate();
}

namespace {

std::string stage_name(const Schedule& s, int t) {
  if (t < s.warmup_steps) return "warmup";
  if (t < s.densify_stop_step) return "joint";
  return "structure";
}

std::size_t count_branch(const Scene& scene) { return branch_indices(scene).size(); }

StructureGraph rebuild_graph(const Scene& scene, const GraphConfig& cfg) {
  if (branch_indices(scene).empty()) return {};
  return build_graph(scene, cfg);
}

/// Per-StP norm of the binding + semantic gradient on center and scales.
std::vector<double> densify_signal(const Scene& scene, const LossContext& ctx, const LossWeights& w) {
  Gradients g = Gradients::zeros_like(scene);
  if (w.on(LossTerm::Bind)) binding_loss(scene, &g, w[LossTerm::Bind]);
  if (w.on(LossTerm::Sem) && ctx.semantic != nullptr && scene.feature_dim() > 0) {
    semantic_loss(scene, *ctx.semantic, w.tau, &g, w[LossTerm::Sem]);
  }
  std::vector<double> out(scene.stps.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::sqrt(g.stp[i].center.squaredNorm() + g.stp[i].scales.squaredNorm());
  }
  return out;
}

}  // namespace

RunResult run(const PlantCloud& cloud, const SemanticReference* semantic, const RunConfig& cfg_in,
              const std::function<void(const LogRecord&)>& on_step) {
  RunConfig cfg = cfg_in;
  cfg.init.seed = cfg.seed;
  cfg.validate();
  cloud.validate();

  RunResult result;
  LossWeights weights = cfg.weights;
  if (!cloud.has_features() || semantic == nullptr) {
    if (weights.on(LossTerm::Sem)) {
      result.warnings.emplace_back("semantic term disabled: cloud features or class references missing");
    }
    weights.set_on(LossTerm::Sem, false);
    semantic = nullptr;
  } else {
    semantic->validate(cloud.feature_dim());
  }

  const Schedule& sched = cfg.schedule;
  Scene scene = init_scene(cloud, cfg.init);
  Optimizer opt(sched, cloud.extent());
  ClassColorMeans means = compute_class_means(scene);
  StructureGraph graph;
  bool graph_live = false;

  std::vector<double> accum(scene.stps.size(), 0.0);
  int accum_count = 0;

  for (int t = 0; t < sched.total_steps; ++t) {
    if (t == sched.densify_stop_step && t > 0) {
      merge_branch_stps(scene, cfg.density);
      graph = rebuild_graph(scene, cfg.graph);
      if (!graph.nodes.empty() && radius_filter(scene, graph, cfg.density) > 0) {
        graph = rebuild_graph(scene, cfg.graph);
      }
      graph_live = !graph.nodes.empty();
      opt.reset();
    } else if (t > sched.densify_stop_step && (t - sched.densify_stop_step) % sched.graph_rebuild_interval == 0) {
      graph = rebuild_graph(scene, cfg.graph);
      graph_live = !graph.nodes.empty();
    }

    if (t > 0 && t % cfg.density.densify_interval == 0) means = compute_class_means(scene, means);
    const LossContext ctx = build_context(scene, &cloud, semantic, graph_live ? &graph : nullptr, means);
    const LossWeights gated = gated_weights(weights, sched, t);

    const bool joint = t >= sched.warmup_steps && t < sched.densify_stop_step;
    if (joint) {
      const auto sig = densify_signal(scene, ctx, gated);
      accum.resize(scene.stps.size(), 0.0);
      for (std::size_t i = 0; i < sig.size(); ++i) accum[i] += sig[i];
      ++accum_count;
    }

    LossReport report = total_loss(scene, ctx, gated);
    for (auto& w : report.warnings) {
      if (std::find(result.warnings.begin(), result.warnings.end(), w) == result.warnings.end()) {
        result.warnings.push_back(std::move(w));
      }
    }

    LogRecord rec;
    rec.step = t;
    rec.stage = stage_name(sched, t);
    rec.values = report.values;
    rec.total = report.total;
    rec.stps = scene.stps.size();
    rec.apps = scene.apps.size();
    rec.branch_stps = count_branch(scene);
    rec.graph_edges = graph_live ? graph.edges.size() : 0;
    if (on_step) on_step(rec);
    result.history.push_back(std::move(rec));

    opt.apply(scene, report.grad, t);

    const int since = t + 1 - sched.warmup_steps;
    if (joint && since > 0 && since % cfg.density.densify_interval == 0 && t + 1 < sched.densify_stop_step) {
      std::vector<double> mean_accum(accum.size());
      for (std::size_t i = 0; i < accum.size(); ++i) mean_accum[i] = accum[i] / std::max(1, accum_count);
      const std::size_t before = scene.stps.size();
      const int splits = densify_stps(scene, mean_accum, cfg.density);
      const int pruned = prune_stps(scene, cfg.density);
      if (splits > 0 || pruned > 0 || scene.stps.size() != before) opt.reset();
      accum.assign(scene.stps.size(), 0.0);
      accum_count = 0;
    }
  }

  merge_branch_stps(scene, cfg.density);
  prune_stub_branches(scene, cfg.density);
  graph = rebuild_graph(scene, cfg.graph);
  scene.check_bindings();
  result.instances = cluster_leaf_instances(scene, cfg.density);
  result.graph = std::move(graph);
  result.scene = std::move(scene);
  return result;
}

}  // namespace plantprim
