#include "plantprim/optimizer.hpp"
#include "plantprim/synthgen.hpp"

#include <doctest.h>

using namespace plantprim;

namespace {

Scene one_stp_one_app(const Vec3& app_center) {
  Scene scene;
  StructurePrimitive s;
  s.scales = Vec3(0.5, 0.1, 0.05);
  s.branch_logit = logit(0.9);
  scene.stps.push_back(s);
  AppearancePrimitive a;
  a.center = app_center;
  scene.apps.push_back(a);
  return scene;
}

LossWeights only(LossTerm t) {
  LossWeights w = LossWeights::zeros();
  w.enabled.fill(false);
  w[t] = 1.0;
  w.set_on(t, true);
  return w;
}

Schedule immediate(int total) {
  Schedule s;
  s.warmup_steps = 0;
  s.densify_stop_step = total;
  s.total_steps = total;
  s.lr_final_fraction = 1.0;
  return s;
}

}  // namespace

TEST_CASE("zero learning rates leave the scene unchanged") {
  const RandomScene rs = random_scene(1);
  Scene scene = rs.scene;
  Schedule sched = immediate(10);
  sched.lr = LearningRates{0, 0, 0, 0, 0, 0, 0, false};
  Optimizer opt(sched, 1.0);
  const LossContext ctx = build_context(scene, &rs.cloud, &rs.semantic, nullptr, compute_class_means(scene));
  for (int t = 0; t < 5; ++t) opt.step(scene, ctx, LossWeights{}, t);
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    CHECK(scene.stps[i].center == rs.scene.stps[i].center);
    CHECK(scene.stps[i].scales == rs.scene.stps[i].scales);
    CHECK(scene.stps[i].rotation == rs.scene.stps[i].rotation);
    CHECK(scene.stps[i].branch_logit == rs.scene.stps[i].branch_logit);
  }
  for (std::size_t a = 0; a < scene.apps.size(); ++a) CHECK(scene.apps[a].center == rs.scene.apps[a].center);
}

TEST_CASE("binding-only descent strictly decreases the loss") {
  // Far enough that 100 steps of size <= 1e-2 on each side cannot reach the surface.
  Scene scene = one_stp_one_app(Vec3(0.1, 2.5, 1.5));
  Schedule sched = immediate(100);
  sched.lr = LearningRates{1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, false};
  Optimizer opt(sched, 1.0);
  double prev = binding_loss(scene);
  for (int t = 0; t < 100; ++t) {
    const LossContext ctx = build_context(scene, nullptr, nullptr, nullptr, {});
    opt.step(scene, ctx, only(LossTerm::Bind), t);
    const double now = binding_loss(scene);
    CHECK(now < prev);
    prev = now;
  }
  CHECK(is_valid(scene.stps[0]));
}

TEST_CASE("warm-up gating switches off all but the data term") {
  Schedule sched;
  const LossWeights gated = gated_weights(LossWeights{}, sched, sched.warmup_steps - 1);
  CHECK(gated.on(LossTerm::Fit));
  for (LossTerm t : {LossTerm::Bind, LossTerm::Sem, LossTerm::Overlap, LossTerm::Cls, LossTerm::Graph, LossTerm::Lap}) {
    CHECK_FALSE(gated.on(t));
  }
  const LossWeights joint = gated_weights(LossWeights{}, sched, sched.warmup_steps);
  CHECK(joint.on(LossTerm::Bind));
  CHECK_FALSE(joint.on(LossTerm::Graph));
  const LossWeights structure = gated_weights(LossWeights{}, sched, sched.densify_stop_step);
  CHECK(structure.on(LossTerm::Graph));
  CHECK(structure.on(LossTerm::Lap));

  const RandomScene rs = random_scene(2);
  const StructureGraph g = build_graph(rs.scene, GraphConfig{});
  const LossContext ctx = build_context(rs.scene, &rs.cloud, &rs.semantic, &g, compute_class_means(rs.scene));
  const LossReport rep = total_loss(rs.scene, ctx, gated);
  for (LossTerm t : {LossTerm::Bind, LossTerm::Sem, LossTerm::Overlap, LossTerm::Cls}) CHECK(rep[t] == 0.0);
  for (const auto& sg : rep.grad.stp) {
    CHECK(sg.logit == 0.0);
    CHECK(sg.scales.norm() == 0.0);
  }
}

TEST_CASE("explicit activation steps override the stage defaults") {
  Schedule s;
  s.activation[static_cast<std::size_t>(LossTerm::Graph)] = 7;
  CHECK(s.activation_step(LossTerm::Graph) == 7);
  CHECK(s.activation_step(LossTerm::Bind) == s.warmup_steps);
  CHECK(s.activation_step(LossTerm::Fit) == 0);
}

TEST_CASE("center moves are capped relative to the major scale") {
  Scene scene = one_stp_one_app(Vec3::Zero());
  Gradients g = Gradients::zeros_like(scene);
  g.stp[0].center = Vec3(1e6, 0, 0);
  Schedule sched = immediate(2);
  Optimizer opt(sched, 1.0);
  opt.apply(scene, g, 0);
  CHECK(scene.stps[0].center.norm() == doctest::Approx(sched.max_center_step * 0.5));
}

TEST_CASE("scale updates keep the ordering and the thickness floor") {
  Scene scene = one_stp_one_app(Vec3::Zero());
  Gradients g = Gradients::zeros_like(scene);
  g.stp[0].scales = Vec3(100.0, -100.0, 100.0);  // pushes s1 down, s2 up, s3 negative
  Schedule sched = immediate(2);
  sched.lr.stp_scale = 1e-3;
  Optimizer opt(sched, 1.0);
  opt.apply(scene, g, 0);
  const Vec3 s = scene.stps[0].scales;
  CHECK(s[0] >= s[1]);
  CHECK(s[1] >= s[2]);
  CHECK(s[2] >= sched.min_thickness_ratio * s[1] - 1e-15);
  CHECK(scene.stps[0].rotation == Mat3::Identity());
}

TEST_CASE("learning rates decay exponentially to the final fraction") {
  Schedule s;
  Optimizer opt(s, 1.0);
  CHECK(opt.rate_multiplier(0) == doctest::Approx(1.0));
  CHECK(opt.rate_multiplier(s.total_steps - 1) == doctest::Approx(s.lr_final_fraction));
}

TEST_CASE("Adam and plain descent both reduce a binding loss") {
  for (UpdateRule rule : {UpdateRule::GradientDescent, UpdateRule::Adam}) {
    Scene scene = one_stp_one_app(Vec3(0.1, 0.4, 0.2));
    Schedule sched = immediate(50);
    sched.rule = rule;
    sched.lr.relative_to_scene = false;
    Optimizer opt(sched, 1.0);
    const double start = binding_loss(scene);
    for (int t = 0; t < 50; ++t) opt.step(scene, build_context(scene, nullptr, nullptr, nullptr, {}), only(LossTerm::Bind), t);
    CHECK(binding_loss(scene) < start);
  }
}

TEST_CASE("mismatched gradients and bad schedules are rejected") {
  Scene scene = one_stp_one_app(Vec3::Zero());
  Optimizer opt(Schedule{}, 1.0);
  CHECK_THROWS_AS(opt.apply(scene, Gradients{}, 0), InvalidArgument);
  Schedule bad;
  bad.warmup_steps = bad.densify_stop_step + 1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = {};
  bad.min_thickness_ratio = 2.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = {};
  bad.lr.stp_center = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_THROWS_AS(Optimizer(Schedule{}, 0.0), InvalidArgument);
}

TEST_CASE("non-finite losses abort naming the term") {
  Scene scene = one_stp_one_app(Vec3::Zero());
  scene.apps[0].center = Vec3(std::nan(""), 0, 0);
  const LossContext ctx = build_context(scene, nullptr, nullptr, nullptr, {});
  try {
    total_loss(scene, ctx, only(LossTerm::Bind));
    FAIL("expected InvalidState");
  } catch (const InvalidState& e) {
    CHECK(std::string(e.what()).find("bind") != std::string::npos);
  }
}

TEST_CASE("a lone cylinder produces one branch family and no leaves") {
  SynthSpec spec;
  spec.depth = 0;
  spec.leaves_per_terminal = 0;
  spec.occlusion_drop = 0.0;
  spec.seed = 3;
  const SynthPlant plant = generate(spec);
  RunConfig cfg;
  cfg.schedule.total_steps = 600;
  cfg.schedule.warmup_steps = 100;
  cfg.schedule.densify_stop_step = 300;
  const RunResult res = run(plant.cloud, &plant.semantic, cfg);
  CHECK(branch_indices(res.scene).size() >= 1);
  for (int l : res.instances) CHECK(l == -1);
  CHECK(res.graph.is_valid_forest());
  CHECK(res.history.size() == 600);
  CHECK(res.history.front().stage == "warmup");
  CHECK(res.history.back().stage == "structure");
}

TEST_CASE("identical seeds give identical histories") {
  const SynthPlant plant = generate(y_junction_spec(2));
  RunConfig cfg;
  cfg.schedule.total_steps = 300;
  cfg.schedule.warmup_steps = 50;
  cfg.schedule.densify_stop_step = 200;
  cfg.seed = 5;
  const RunResult a = run(plant.cloud, &plant.semantic, cfg);
  const RunResult b = run(plant.cloud, &plant.semantic, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].values == b.history[i].values);
    CHECK(a.history[i].total == b.history[i].total);
  }
  CHECK(a.instances == b.instances);
}
