#include "plantprim/losses.hpp"

#include "plantprim/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace plantprim {

namespace {

constexpr double kOverlapScaleFloor = 1e-9;
constexpr double kProbClamp = 1e-12;

struct CylinderPart {
  double d = 0.0;
  Vec3 dq = Vec3::Zero();
  double dradius = 0.0;
  Vec3 daxis = Vec3::Zero();
};

CylinderPart cylinder_part(const Vec3& q, const Vec3& center, const Vec3& axis, double radius) {
  CylinderPart out;
  const Vec3 w = q - center;
  const double t = w.dot(axis);
  const Vec3 radial = w - t * axis;
  const double rn = radial.norm();
  const double gap = rn - radius;
  if (gap <= 0.0 || rn == 0.0) {
    return out;
  }
  const Vec3 n = radial / rn;
  out.d = gap;
  out.dq = n;
  out.dradius = -1.0;
  out.daxis = -t * n;
  return out;
}

using Vec2d = Eigen::Vector2d;

/// Nearest point on the ellipse (x/a)^2 + (y/b)^2 = 1 to an exterior point.
/// The foot is (a^2 x / (t + a^2), b^2 y / (t + b^2)) with t > 0 the root of a
/// decreasing secular function, found by bisection.
Vec2d ellipse_foot(double x, double y, double a, double b) {
  const double ax = a * std::abs(x);
  const double by = b * std::abs(y);
  auto f = [&](double t) {
    const double u = ax / (t + a * a);
    const double v = by / (t + b * b);
    return u * u + v * v - 1.0;
  };
  double lo = 0.0;
  double hi = std::sqrt(ax * ax + by * by);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  const double t = 0.5 * (lo + hi);
  return Vec2d(a * a * x / (t + a * a), b * b * y / (t + b * b));
}

struct DiskPart {
  double d = 0.0;
  Vec3 dq = Vec3::Zero();
  double dmajor = 0.0;
  double dminor = 0.0;
  Vec3 de1 = Vec3::Zero();
  Vec3 de2 = Vec3::Zero();
  Vec3 dn = Vec3::Zero();
};

DiskPart disk_part(const Vec3& q, const Vec3& center, const Vec3& e1, const Vec3& e2, const Vec3& normal, double a,
                   double b) {
  DiskPart out;
  const Vec3 w = q - center;
  const double x = w.dot(e1);
  const double y = w.dot(e2);
  const double h = w.dot(normal);
  const double rho = std::sqrt((x / a) * (x / a) + (y / b) * (y / b));
  if (rho <= 1.0) {
    out.d = std::abs(h);
    const double sgn = h > 0.0 ? 1.0 : (h < 0.0 ? -1.0 : 0.0);
    out.dq = sgn * normal;
    out.dn = sgn * w;
    return out;
  }
  const Vec2d foot = ellipse_foot(x, y, a, b);
  const double ex = x - foot.x();
  const double ey = y - foot.y();
  const double edge = std::sqrt(ex * ex + ey * ey);
  const double d = std::sqrt(h * h + edge * edge);
  out.d = d;
  // The foot point is stationary, so only the explicit dependence survives.
  const double dd_dx = ex / d;
  const double dd_dy = ey / d;
  const double dd_dh = h / d;
  out.dmajor = -ex * foot.x() / (a * d);
  out.dminor = -ey * foot.y() / (b * d);
  out.dq = dd_dx * e1 + dd_dy * e2 + dd_dh * normal;
  out.de1 = dd_dx * w;
  out.de2 = dd_dy * w;
  out.dn = dd_dh * w;
  return out;
}

}  // namespace

std::string_view term_name(LossTerm term) {
  switch (term) {
    case LossTerm::Fit: return "fit";
    case LossTerm::Bind: return "bind";
    case LossTerm::Sem: return "sem";
    case LossTerm::Overlap: return "op";
    case LossTerm::Cls: return "cls";
    case LossTerm::Graph: return "graph";
    case LossTerm::Lap: return "lap";
  }
  return "?";
}

LossWeights LossWeights::zeros() {
  LossWeights w;
  w.weight.fill(0.0);
  return w;
}

void LossWeights::validate() const {
  for (double w : weight) {
    if (!(w >= 0.0)) throw InvalidArgument("loss weights must be non-negative");
  }
  if (!(tau > 0.0)) throw InvalidArgument("semantic temperature tau must be positive");
}

SemanticReference SemanticReference::normalized(VecX branch, VecX leaf) {
  if (branch.size() != leaf.size() || branch.size() == 0 || branch.norm() == 0.0 || leaf.norm() == 0.0) {
    throw InvalidArgument("semantic reference: need two non-zero vectors of equal dimension");
  }
  return SemanticReference{branch.normalized(), leaf.normalized()};
}

void SemanticReference::validate(std::size_t dim) const {
  if (static_cast<std::size_t>(branch.size()) != dim || static_cast<std::size_t>(leaf.size()) != dim) {
    throw InvalidArgument("semantic reference dimension " + std::to_string(branch.size()) +
                          " does not match feature dimension " + std::to_string(dim));
  }
  if (std::abs(branch.norm() - 1.0) > 1e-9 || std::abs(leaf.norm() - 1.0) > 1e-9) {
    throw InvalidArgument("semantic reference vectors must be unit length");
  }
}

double dist_point_cylinder(const Vec3& q, const Cylinder& cy) {
  return cylinder_part(q, cy.center, cy.axis, cy.radius).d;
}

double dist_point_disk(const Vec3& q, const Disk& di) {
  return disk_part(q, di.center, di.e1, di.e2, di.normal, di.major, di.minor).d;
}

double disk_rho(const Vec3& q, const Disk& di) {
  const Vec3 w = q - di.center;
  const double x = w.dot(di.e1) / di.major;
  const double y = w.dot(di.e2) / di.minor;
  return std::sqrt(x * x + y * y);
}

double binding_loss(const Scene& scene, Gradients* grad, double weight) {
  scene.check_bindings();
  if (scene.apps.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(scene.apps.size());
  double total = 0.0;
  for (std::size_t a = 0; a < scene.apps.size(); ++a) {
    const auto& app = scene.apps[a];
    const auto& stp = scene.stps[app.parent];
    const double p = stp.p_branch();
    const CylinderPart cy = cylinder_part(app.center, stp.center, stp.axis(0), stp.scales[1]);
    const DiskPart di =
        disk_part(app.center, stp.center, stp.axis(0), stp.axis(1), stp.axis(2), 2.0 * stp.scales[0], stp.scales[1]);
    total += p * cy.d + (1.0 - p) * di.d;
    if (grad == nullptr) continue;

    const double wc = weight * inv * p;
    const double wd = weight * inv * (1.0 - p);
    auto& ga = grad->app[a];
    auto& gs = grad->stp[app.parent];
    const Vec3 dq = wc * cy.dq + wd * di.dq;
    ga.center += dq;
    gs.center -= dq;
    gs.scales[1] += wc * cy.dradius + wd * di.dminor;
    gs.scales[0] += wd * 2.0 * di.dmajor;
    gs.axes.col(0) += wc * cy.daxis + wd * di.de1;
    gs.axes.col(1) += wd * di.de2;
    gs.axes.col(2) += wd * di.dn;
    gs.logit += weight * inv * (cy.d - di.d) * p * (1.0 - p);
  }
  return total * inv;
}

std::vector<std::vector<std::size_t>> overlap_neighbors(const Scene& scene, int k) {
  std::vector<std::size_t> active;
  std::vector<Vec3> centers;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (scene.stps[i].active) {
      active.push_back(i);
      centers.push_back(scene.stps[i].center);
    }
  }
  std::vector<std::vector<std::size_t>> out(scene.stps.size());
  if (active.size() < 2) return out;
  const KdTree tree(centers);
  for (std::size_t n = 0; n < active.size(); ++n) {
    for (const auto& hit : tree.knn(centers[n], static_cast<std::size_t>(k) + 1)) {
      if (hit.index == n) continue;
      if (out[active[n]].size() < static_cast<std::size_t>(k)) {
        out[active[n]].push_back(active[hit.index]);
      }
    }
  }
  return out;
}

double overlap_loss(const Scene& scene, const std::vector<std::vector<std::size_t>>& neighbors, Gradients* grad,
                    double weight) {
  std::size_t active = 0;
  for (const auto& s : scene.stps) active += s.active ? 1 : 0;
  if (active < 2) {
    throw InvalidArgument("overlap_loss: needs at least two active structure primitives");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < scene.stps.size() && i < neighbors.size(); ++i) {
    if (!scene.stps[i].active) continue;
    for (std::size_t j : neighbors[i]) {
      const auto& sj = scene.stps[j];
      const Vec3 d = scene.stps[i].center - sj.center;
      double m = 0.0;
      Vec3 proj;
      Vec3 scale;
      for (int k = 0; k < 3; ++k) {
        scale[k] = std::max(sj.scales[k], kOverlapScaleFloor);
        proj[k] = d.dot(sj.axis(k));
        m += proj[k] * proj[k] / (scale[k] * scale[k]);
      }
      const double term = std::exp(-0.5 * m);
      total += term;
      if (grad == nullptr || term == 0.0) continue;
      Vec3 dd = Vec3::Zero();
      auto& gj = grad->stp[j];
      for (int k = 0; k < 3; ++k) {
        const double c = proj[k] / (scale[k] * scale[k]);
        dd -= weight * term * c * sj.axis(k);
        gj.axes.col(k) -= weight * term * c * d;
        if (sj.scales[k] > kOverlapScaleFloor) {
          gj.scales[k] += weight * term * proj[k] * proj[k] / (scale[k] * scale[k] * scale[k]);
        }
      }
      grad->stp[i].center += dd;
      gj.center -= dd;
    }
  }
  return total;
}

ClassColorMeans compute_class_means(const Scene& scene, const ClassColorMeans& previous) {
  Vec3 sum_b = Vec3::Zero();
  Vec3 sum_l = Vec3::Zero();
  std::size_t nb = 0;
  std::size_t nl = 0;
  for (const auto& app : scene.apps) {
    if (app.parent >= scene.stps.size()) continue;
    if (classify(scene.stps[app.parent]) == PrimitiveClass::Branch) {
      sum_b += app.color;
      ++nb;
    } else {
      sum_l += app.color;
      ++nl;
    }
  }
  if (nb == 0 || nl == 0) {
    return previous;
  }
  return ClassColorMeans{sum_b / static_cast<double>(nb), sum_l / static_cast<double>(nl), true};
}

double confidence_loss(const Scene& scene, Gradients* grad, double weight) {
  std::size_t count = 0;
  for (const auto& s : scene.stps) count += s.active ? 1 : 0;
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (!scene.stps[i].active) continue;
    const double p = scene.stps[i].p_branch();
    total += p * (1.0 - p);
    if (grad != nullptr) {
      grad->stp[i].logit += weight * inv * (1.0 - 2.0 * p) * p * (1.0 - p);
    }
  }
  return total * inv;
}

double classification_loss(const Scene& scene, const ClassColorMeans& means, Gradients* grad, double weight) {
  double col = 0.0;
  if (means.valid && !scene.apps.empty()) {
    scene.check_bindings();
    const double inv = 1.0 / static_cast<double>(scene.apps.size());
    for (std::size_t a = 0; a < scene.apps.size(); ++a) {
      const auto& app = scene.apps[a];
      const double p = scene.stps[app.parent].p_branch();
      // Branch probability weighs the distance to the branch mean so that
      // descent raises p where the color matches branches.
      const Vec3 rb = app.color - means.branch;
      const Vec3 rl = app.color - means.leaf;
      const double db = rb.squaredNorm();
      const double dl = rl.squaredNorm();
      col += p * db + (1.0 - p) * dl;
      if (grad != nullptr) {
        grad->app[a].color += weight * inv * (2.0 * p * rb + 2.0 * (1.0 - p) * rl);
        grad->stp[app.parent].logit += weight * inv * (db - dl) * p * (1.0 - p);
      }
    }
    col *= inv;
  }
  return col + confidence_loss(scene, grad, weight);
}

VecX pooled_feature(const Scene& scene, const std::vector<std::size_t>& bound) {
  const auto dim = static_cast<Eigen::Index>(scene.feature_dim());
  VecX f = VecX::Zero(dim);
  if (bound.empty()) return f;
  for (std::size_t a : bound) f += scene.apps[a].feature;
  return f / static_cast<double>(bound.size());
}

SemanticLikelihood semantic_likelihood(const VecX& pooled, const SemanticReference& ref, double tau) {
  SemanticLikelihood out;
  const double norm = pooled.norm();
  if (norm == 0.0) {
    out.degenerate = true;
    return out;
  }
  const double lb = pooled.dot(ref.branch) / norm / tau;
  const double ll = pooled.dot(ref.leaf) / norm / tau;
  const double mx = std::max(lb, ll);
  const double eb = std::exp(lb - mx);
  const double el = std::exp(ll - mx);
  out.branch = eb / (eb + el);
  out.leaf = el / (eb + el);
  return out;
}

double semantic_loss(const Scene& scene, const SemanticReference& ref, double tau, Gradients* grad, double weight,
                     std::vector<std::string>* warnings) {
  ref.validate(scene.feature_dim());
  const auto groups = scene.apps_by_parent();
  std::size_t count = 0;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (scene.stps[i].active && !groups[i].empty()) ++count;
  }
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  const double log_lo = std::log(kProbClamp);
  const double log_hi = std::log1p(-kProbClamp);
  double total = 0.0;
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (!scene.stps[i].active || groups[i].empty()) continue;
    const double p = scene.stps[i].p_branch();
    const VecX f = pooled_feature(scene, groups[i]);
    const double norm = f.norm();
    if (norm == 0.0) {
      ++degenerate;
      total += -std::log(0.5);
      continue;
    }
    const double cb = f.dot(ref.branch) / norm;
    const double cl = f.dot(ref.leaf) / norm;
    const double lb = cb / tau;
    const double ll = cl / tau;
    const double mx = std::max(lb, ll);
    const double lse = mx + std::log(std::exp(lb - mx) + std::exp(ll - mx));
    const double raw_b = lb - lse;
    const double raw_l = ll - lse;
    const double log_b = std::clamp(raw_b, log_lo, log_hi);
    const double log_l = std::clamp(raw_l, log_lo, log_hi);
    total += -((1.0 - p) * log_l + p * log_b);
    if (grad == nullptr) continue;

    grad->stp[i].logit += weight * inv * -(log_b - log_l) * p * (1.0 - p);
    // d(-w_b log pi_b - w_l log pi_l)/d logits, dropping clamped branches.
    const double pib = std::exp(raw_b);
    const double pil = std::exp(raw_l);
    const double wb = (raw_b == log_b) ? p : 0.0;
    const double wl = (raw_l == log_l) ? (1.0 - p) : 0.0;
    const double g_lb = -wb * (1.0 - pib) + wl * pib;
    const double g_ll = -wl * (1.0 - pil) + wb * pil;
    const VecX fhat = f / norm;
    const VecX dcb = (ref.branch - cb * fhat) / norm;
    const VecX dcl = (ref.leaf - cl * fhat) / norm;
    const VecX df = (g_lb * dcb + g_ll * dcl) / tau;
    const double share = weight * inv / static_cast<double>(groups[i].size());
    for (std::size_t a : groups[i]) {
      grad->app[a].feature += share * df;
    }
  }
  if (degenerate > 0 && warnings != nullptr) {
    warnings->push_back("semantic: " + std::to_string(degenerate) +
                        " structure primitive(s) with zero-norm pooled feature treated as uniform");
  }
  return total * inv;
}

double data_fit_loss(const Scene& scene, const PlantCloud& cloud, const std::vector<std::size_t>& cloud_to_app,
                     const std::vector<std::size_t>& app_to_cloud, Gradients* grad, double weight) {
  if (scene.apps.empty() || cloud.size() == 0) {
    throw InvalidArgument("data_fit_loss: needs non-empty ApP set and cloud");
  }
  const bool use_features = cloud.has_features() && scene.feature_dim() > 0;
  if (use_features && cloud.feature_dim() != scene.feature_dim()) {
    throw InvalidArgument("data_fit_loss: cloud feature dimension " + std::to_string(cloud.feature_dim()) +
                          " != ApP feature dimension " + std::to_string(scene.feature_dim()));
  }

  auto pair_term = [&](std::size_t p, std::size_t a, double scale) {
    const auto& app = scene.apps[a];
    const Vec3 dx = app.center - cloud.points[p];
    const double dist = dx.norm();
    const Vec3 dc = app.color - cloud.colors[p];
    double value = dist + dc.squaredNorm();
    VecX df;
    if (use_features) {
      df = app.feature - cloud.features[p];
      value += df.squaredNorm();
    }
    if (grad != nullptr) {
      auto& ga = grad->app[a];
      if (dist > 0.0) ga.center += weight * scale * dx / dist;
      ga.color += weight * scale * 2.0 * dc;
      if (use_features) ga.feature += weight * scale * 2.0 * df;
    }
    return value;
  };

  const double sc = 0.5 / static_cast<double>(cloud.size());
  const double sa = 0.5 / static_cast<double>(scene.apps.size());
  double total = 0.0;
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    total += sc * pair_term(p, cloud_to_app[p], sc);
  }
  for (std::size_t a = 0; a < scene.apps.size(); ++a) {
    total += sa * pair_term(app_to_cloud[a], a, sa);
  }
  return total;
}

double data_fit_loss(const Scene& scene, const PlantCloud& cloud, Gradients* grad, double weight) {
  const LossContext ctx = build_context(scene, &cloud, nullptr, nullptr, {});
  return data_fit_loss(scene, cloud, ctx.cloud_to_app, ctx.app_to_cloud, grad, weight);
}

LossContext build_context(const Scene& scene, const PlantCloud* cloud, const SemanticReference* semantic,
                          const StructureGraph* graph, const ClassColorMeans& class_means) {
  LossContext ctx;
  ctx.cloud = cloud;
  ctx.semantic = semantic;
  ctx.graph = graph;
  ctx.class_means = class_means;
  ctx.overlap_neighbors = overlap_neighbors(scene);
  if (cloud != nullptr && cloud->size() > 0 && !scene.apps.empty()) {
    std::vector<Vec3> centers;
    centers.reserve(scene.apps.size());
    for (const auto& app : scene.apps) centers.push_back(app.center);
    const KdTree app_tree(centers);
    const KdTree cloud_tree(cloud->points);
    ctx.cloud_to_app.resize(cloud->size());
    for (std::size_t p = 0; p < cloud->size(); ++p) {
      ctx.cloud_to_app[p] = app_tree.nearest(cloud->points[p]).index;
    }
    ctx.app_to_cloud.resize(scene.apps.size());
    for (std::size_t a = 0; a < scene.apps.size(); ++a) {
      ctx.app_to_cloud[a] = cloud_tree.nearest(centers[a]).index;
    }
  }
  return ctx;
}

LossReport total_loss(const Scene& scene, const LossContext& ctx, const LossWeights& weights) {
  weights.validate();
  LossReport report;
  report.grad = Gradients::zeros_like(scene);
  Gradients* g = &report.grad;

  auto run = [&](LossTerm term, auto&& fn) {
    if (!weights.on(term)) return;
    const double value = fn(weights[term]);
    if (!std::isfinite(value) || !report.grad.all_finite()) {
      throw InvalidState("non-finite value or gradient in loss term '" + std::string(term_name(term)) + "'");
    }
    report.values[static_cast<std::size_t>(term)] = value;
    report.total += weights[term] * value;
  };

  run(LossTerm::Fit, [&](double w) {
    if (ctx.cloud == nullptr || scene.apps.empty()) return 0.0;
    return data_fit_loss(scene, *ctx.cloud, ctx.cloud_to_app, ctx.app_to_cloud, g, w);
  });
  run(LossTerm::Bind, [&](double w) { return binding_loss(scene, g, w); });
  run(LossTerm::Sem, [&](double w) {
    if (ctx.semantic == nullptr || scene.feature_dim() == 0) return 0.0;
    return semantic_loss(scene, *ctx.semantic, weights.tau, g, w, &report.warnings);
  });
  run(LossTerm::Overlap, [&](double w) {
    std::size_t active = 0;
    for (const auto& s : scene.stps) active += s.active ? 1 : 0;
    if (active < 2) return 0.0;
    const double n = weights.overlap_mean ? static_cast<double>(active) : 1.0;
    return overlap_loss(scene, ctx.overlap_neighbors, g, w / n) / n;
  });
  run(LossTerm::Cls, [&](double w) { return classification_loss(scene, ctx.class_means, g, w); });
  run(LossTerm::Graph, [&](double w) {
    if (ctx.graph == nullptr) return 0.0;
    return graph_loss(scene, *ctx.graph, g, w);
  });
  run(LossTerm::Lap, [&](double w) {
    if (ctx.graph == nullptr) return 0.0;
    return laplacian_loss(scene, *ctx.graph, g, w);
  });

  report.grad.finalize(scene);
  if (!report.grad.all_finite()) {
    throw InvalidState("non-finite rotation gradient in total loss");
  }
  return report;
}

// --- finite differences ----------------------------------------------------

namespace {

struct ParamRef {
  enum Kind { StpCenter, StpScale, StpRot, StpLogit, AppCenter, AppColor, AppFeature } kind;
  std::size_t index;
  int component;
};

void perturb(Scene& scene, const ParamRef& p, double delta) {
  switch (p.kind) {
    case ParamRef::StpCenter: scene.stps[p.index].center[p.component] += delta; break;
    case ParamRef::StpScale: scene.stps[p.index].scales[p.component] += delta; break;
    case ParamRef::StpRot: {
      Vec3 w = Vec3::Zero();
      w[p.component] = delta;
      scene.stps[p.index].rotation = scene.stps[p.index].rotation * exp_so3(w);
      break;
    }
    case ParamRef::StpLogit: scene.stps[p.index].branch_logit += delta; break;
    case ParamRef::AppCenter: scene.apps[p.index].center[p.component] += delta; break;
    case ParamRef::AppColor: scene.apps[p.index].color[p.component] += delta; break;
    case ParamRef::AppFeature: scene.apps[p.index].feature[p.component] += delta; break;
  }
}

double analytic(const Gradients& g, const ParamRef& p) {
  switch (p.kind) {
    case ParamRef::StpCenter: return g.stp[p.index].center[p.component];
    case ParamRef::StpScale: return g.stp[p.index].scales[p.component];
    case ParamRef::StpRot: return g.stp[p.index].rotation[p.component];
    case ParamRef::StpLogit: return g.stp[p.index].logit;
    case ParamRef::AppCenter: return g.app[p.index].center[p.component];
    case ParamRef::AppColor: return g.app[p.index].color[p.component];
    case ParamRef::AppFeature: return g.app[p.index].feature[p.component];
  }
  return 0.0;
}

struct SlopeCheck {
  bool kink;
  double rel_error;
};

SlopeCheck compare(double f0, double fp, double fm, double h, double a) {
  const double fwd = (fp - f0) / h;
  const double bwd = (f0 - fm) / h;
  const double central = (fp - fm) / (2.0 * h);
  const double jump = std::abs(fwd - bwd);
  if (jump > std::max(1e-2 * (std::abs(fwd) + std::abs(bwd)), 1e-6)) {
    return {true, 0.0};
  }
  const double denom = std::max({std::abs(a), std::abs(central), 1e-6});
  return {false, std::abs(a - central) / denom};
}

}  // namespace

FiniteDiffResult finite_diff_check(const Scene& scene, const LossContext& ctx, const LossWeights& weights, double h,
                                   std::size_t max_params, std::uint64_t seed) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_check: h must be positive");
  const LossReport base = total_loss(scene, ctx, weights);

  std::vector<ParamRef> params;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    if (!scene.stps[i].active) continue;
    for (int c = 0; c < 3; ++c) {
      params.push_back({ParamRef::StpCenter, i, c});
      params.push_back({ParamRef::StpScale, i, c});
      params.push_back({ParamRef::StpRot, i, c});
    }
    params.push_back({ParamRef::StpLogit, i, 0});
  }
  for (std::size_t a = 0; a < scene.apps.size(); ++a) {
    for (int c = 0; c < 3; ++c) {
      params.push_back({ParamRef::AppCenter, a, c});
      params.push_back({ParamRef::AppColor, a, c});
    }
    for (int c = 0; c < static_cast<int>(scene.apps[a].feature.size()); ++c) {
      params.push_back({ParamRef::AppFeature, a, c});
    }
  }
  if (params.size() > max_params) {
    std::mt19937_64 rng(seed);
    std::shuffle(params.begin(), params.end(), rng);
    params.resize(max_params);
  }

  FiniteDiffResult result;
  for (const auto& p : params) {
    Scene plus = scene;
    perturb(plus, p, h);
    Scene minus = scene;
    perturb(minus, p, -h);
    const double fp = total_loss(plus, ctx, weights).total;
    const double fm = total_loss(minus, ctx, weights).total;
    const SlopeCheck check = compare(base.total, fp, fm, h, analytic(base.grad, p));
    if (check.kink) {
      ++result.excluded;
      continue;
    }
    ++result.checked;
    result.max_rel_error = std::max(result.max_rel_error, check.rel_error);
  }
  return result;
}

std::array<FiniteDiffResult, kLossTermCount> check_term_gradients(const Scene& scene, const LossContext& ctx, double tau,
                                                                  double h, std::size_t max_params, std::uint64_t seed) {
  std::array<FiniteDiffResult, kLossTermCount> out{};
  for (LossTerm t : kAllLossTerms) {
    LossWeights w = LossWeights::zeros();
    w.enabled.fill(false);
    w.tau = tau;
    w[t] = 1.0;
    w.set_on(t, true);
    out[static_cast<std::size_t>(t)] = finite_diff_check(scene, ctx, w, h, max_params, seed);
  }
  return out;
}

FiniteDiffResult finite_diff_check(const std::function<double(const VecX&)>& f, const VecX& x, const VecX& analytic_grad,
                                   double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_check: h must be positive");
  FiniteDiffResult result;
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VecX xp = x;
    VecX xm = x;
    xp[i] += h;
    xm[i] -= h;
    const SlopeCheck check = compare(f0, f(xp), f(xm), h, analytic_grad[i]);
    if (check.kink) {
      ++result.excluded;
      continue;
    }
    ++result.checked;
    result.max_rel_error = std::max(result.max_rel_error, check.rel_error);
  }
  return result;
}

// --- gradients container ---------------------------------------------------

Gradients Gradients::zeros_like(const Scene& scene) {
  Gradients g;
  g.stp.resize(scene.stps.size());
  g.app.resize(scene.apps.size());
  const auto dim = static_cast<Eigen::Index>(scene.feature_dim());
  for (auto& a : g.app) a.feature = VecX::Zero(dim);
  return g;
}

void Gradients::finalize(const Scene& scene) {
  for (std::size_t i = 0; i < stp.size(); ++i) {
    const Mat3& r = scene.stps[i].rotation;
    Vec3 w = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      w += Vec3::Unit(k).cross(r.transpose() * stp[i].axes.col(k));
    }
    stp[i].rotation = w;
  }
}

void Gradients::add(const Gradients& other, double scale) {
  for (std::size_t i = 0; i < stp.size() && i < other.stp.size(); ++i) {
    stp[i].center += scale * other.stp[i].center;
    stp[i].scales += scale * other.stp[i].scales;
    stp[i].axes += scale * other.stp[i].axes;
    stp[i].rotation += scale * other.stp[i].rotation;
    stp[i].logit += scale * other.stp[i].logit;
  }
  for (std::size_t a = 0; a < app.size() && a < other.app.size(); ++a) {
    app[a].center += scale * other.app[a].center;
    app[a].color += scale * other.app[a].color;
    if (app[a].feature.size() == other.app[a].feature.size()) app[a].feature += scale * other.app[a].feature;
  }
}

bool Gradients::all_finite() const {
  for (const auto& s : stp) {
    if (!s.center.allFinite() || !s.scales.allFinite() || !s.rotation.allFinite() || !std::isfinite(s.logit)) {
      return false;
    }
  }
  for (const auto& a : app) {
    if (!a.center.allFinite() || !a.color.allFinite() || !a.feature.allFinite()) return false;
  }
  return true;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (const auto& s : stp) {
    m = std::max({m, s.center.cwiseAbs().maxCoeff(), s.scales.cwiseAbs().maxCoeff(),
                  s.rotation.cwiseAbs().maxCoeff(), std::abs(s.logit)});
  }
  for (const auto& a : app) {
    m = std::max({m, a.center.cwiseAbs().maxCoeff(), a.color.cwiseAbs().maxCoeff()});
    if (a.feature.size() > 0) m = std::max(m, a.feature.cwiseAbs().maxCoeff());
  }
  return m;
}

}  // namespace plantprim
