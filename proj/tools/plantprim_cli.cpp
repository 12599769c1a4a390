// plantprim: synthetic plants, primitive fitting, graph extraction, evaluation.

#include "plantprim/config.hpp"
#include "plantprim/io.hpp"
#include "plantprim/metrics.hpp"
#include "plantprim/optimizer.hpp"
#include "plantprim/synthgen.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace plantprim;

namespace {

struct Shared {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out_dir = ".";
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--seed", s.seed, "Random seed (overrides the config file)");
  cmd->add_option("--config", s.config, "Flat JSON run config with dotted keys");
  cmd->add_option("--out-dir", s.out_dir, "Directory for outputs")->capture_default_str();
}

RunConfig resolve_config(const Shared& s) {
  RunConfig cfg = s.config.empty() ? RunConfig{} : load_run_config(s.config);
  if (s.seed) cfg.seed = *s.seed;
  return cfg;
}

std::string out_path(const Shared& s, const std::string& name) {
  fs::create_directories(s.out_dir);
  return (fs::path(s.out_dir) / name).string();
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw IoError("no such file: '" + path + "'");
}

int cmd_synth(const Shared& shared, SynthSpec spec) {
  spec.seed = shared.seed.value_or(0);
  const SynthPlant plant = generate(spec);
  save_cloud(plant.cloud, out_path(shared, "cloud.ply"));
  save_ground_truth(plant.gt_graph, plant.leaf_instances, out_path(shared, "gt_graph.json"));
  if (spec.feature_dim > 0) save_semantic(plant.semantic, out_path(shared, "semantic.json"));
  std::cout << "points " << plant.cloud.size() << " segments " << plant.segments.size() << " leaves "
            << plant.leaf_instances << '\n';
  return 0;
}

int cmd_fit(const Shared& shared, const std::string& cloud_path, const std::string& semantic_path, bool quiet) {
  require_file(cloud_path);
  const RunConfig cfg = resolve_config(shared);
  const PlantCloud cloud = load_cloud(cloud_path);
  std::optional<SemanticReference> semantic;
  if (!semantic_path.empty()) {
    require_file(semantic_path);
    semantic = load_semantic(semantic_path);
  }
  std::ofstream log(out_path(shared, "loss_log.jsonl"));
  if (!log) throw IoError("cannot open '" + out_path(shared, "loss_log.jsonl") + "' for writing");
  const int every = std::max(1, cfg.schedule.total_steps / 20);
  const RunResult res = run(cloud, semantic ? &*semantic : nullptr, cfg, [&](const LogRecord& rec) {
    log << log_record_json(rec) << '\n';
    if (!quiet && rec.step % every == 0) {
      std::cerr << "step " << rec.step << " [" << rec.stage << "] total " << rec.total << " stps " << rec.stps
                << '\n';
    }
  });
  log.close();
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  export_primitives(res.scene, out_path(shared, "scene.json"));
  export_graph(res.graph, out_path(shared, "graph.json"));
  save_instances(res.instances, out_path(shared, "instances.json"));
  export_obj(res.scene, out_path(shared, "primitives.obj"));
  save_run_config(cfg, out_path(shared, "config_used.json"));
  std::size_t n_instances = 0;
  for (int l : res.instances) n_instances = std::max<std::size_t>(n_instances, static_cast<std::size_t>(l + 1));
  std::cout << "stps " << res.scene.stps.size() << " apps " << res.scene.apps.size() << " graph_edges "
            << res.graph.edges.size() << " leaf_instances " << n_instances << '\n';
  return 0;
}

int cmd_extract_graph(const Shared& shared, const std::string& scene_path) {
  require_file(scene_path);
  const RunConfig cfg = resolve_config(shared);
  const Scene scene = import_primitives(scene_path);
  const StructureGraph graph = build_graph(scene, cfg.graph);
  export_graph(graph, out_path(shared, "graph.json"));
  std::cout << "nodes " << graph.nodes.size() << " edges " << graph.edges.size() << '\n';
  return 0;
}

int cmd_segment_leaves(const Shared& shared, const std::string& scene_path) {
  require_file(scene_path);
  const RunConfig cfg = resolve_config(shared);
  const Scene scene = import_primitives(scene_path);
  const auto labels = cluster_leaf_instances(scene, cfg.density);
  save_instances(labels, out_path(shared, "instances.json"));
  int count = 0;
  for (int l : labels) count = std::max(count, l + 1);
  std::cout << "leaf_instances " << count << '\n';
  return 0;
}

int cmd_eval(const Shared& shared, const std::string& scene_path, const std::string& graph_path,
             const std::string& instances_path, const std::string& cloud_path, const std::string& gt_path,
             double samples_per_unit) {
  for (const auto* p : {&scene_path, &graph_path, &instances_path, &cloud_path, &gt_path}) require_file(*p);
  const Scene scene = import_primitives(scene_path);
  const StructureGraph graph = import_graph(graph_path);
  const auto instances = load_instances(instances_path);
  const PlantCloud cloud = load_cloud(cloud_path);
  const StructureGraph gt = load_ground_truth(gt_path);
  const MetricsReport report = evaluate(scene, graph, instances, cloud, gt, samples_per_unit);
  save_metrics(report, out_path(shared, "metrics.json"));
  std::cout << metrics_to_json(report) << '\n';
  return 0;
}

int cmd_check_grad(const Shared& shared, int scenes, double h, double tol) {
  const std::uint64_t seed = shared.seed.value_or(0);
  std::array<double, kLossTermCount> worst{};
  for (int k = 0; k < scenes; ++k) {
    const RandomScene rs = random_scene(seed + static_cast<std::uint64_t>(k));
    const StructureGraph graph = build_graph(rs.scene, GraphConfig{});
    const LossContext ctx =
        build_context(rs.scene, &rs.cloud, &rs.semantic, &graph, compute_class_means(rs.scene));
    const auto res = check_term_gradients(rs.scene, ctx, 0.1, h);
    for (std::size_t t = 0; t < kLossTermCount; ++t) worst[t] = std::max(worst[t], res[t].max_rel_error);
  }
  bool ok = true;
  for (LossTerm t : kAllLossTerms) {
    const double e = worst[static_cast<std::size_t>(t)];
    const bool pass = e < tol;
    ok = ok && pass;
    std::cout << term_name(t) << " max_rel_error " << e << (pass ? " ok" : " FAIL") << '\n';
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fit structure/appearance primitives to plant point clouds"};
  app.require_subcommand(1);

  Shared shared;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic plant (cloud.ply, gt_graph.json, semantic.json)");
  add_shared(synth, shared);
  SynthSpec spec;
  synth->add_option("--depth", spec.depth)->capture_default_str();
  synth->add_option("--branching", spec.branching_factor)->capture_default_str();
  synth->add_option("--leaves", spec.leaves_per_terminal, "Leaves per terminal segment")->capture_default_str();
  synth->add_option("--feature-noise", spec.feature_noise)->capture_default_str();
  synth->add_option("--feature-dim", spec.feature_dim)->capture_default_str();
  synth->add_option("--occlusion", spec.occlusion_drop, "Fraction of branch points dropped")->capture_default_str();
  synth->add_option("--density", spec.points_per_area, "Points per unit area")->capture_default_str();
  synth->add_option("--trunk-radius", spec.trunk_radius)->capture_default_str();
  synth->add_option("--leaf-major", spec.leaf_major, "Leaf ellipse semi-major axis")->capture_default_str();
  synth->add_option("--leaf-minor", spec.leaf_minor, "Leaf ellipse semi-minor axis")->capture_default_str();
  synth->add_option("--petiole", spec.petiole_length, "Unsampled gap between branch tip and leaf base")
      ->capture_default_str();

  auto* fit = app.add_subcommand("fit", "Fit primitives (scene.json, graph.json, instances.json, loss_log.jsonl)");
  add_shared(fit, shared);
  std::string cloud_path, semantic_path;
  bool quiet = false;
  fit->add_option("cloud", cloud_path, "Input PLY")->required();
  fit->add_option("--semantic", semantic_path, "Class reference features (JSON)");
  fit->add_flag("--quiet", quiet);

  auto* extract = app.add_subcommand("extract-graph", "Rebuild the structure graph from a scene");
  add_shared(extract, shared);
  std::string scene_path;
  extract->add_option("scene", scene_path)->required();

  auto* segment = app.add_subcommand("segment-leaves", "Cluster leaf primitives into instances");
  add_shared(segment, shared);
  segment->add_option("scene", scene_path)->required();

  auto* eval = app.add_subcommand("eval", "Score a fit against ground truth (metrics.json)");
  add_shared(eval, shared);
  std::string graph_path, instances_path, gt_path, eval_cloud;
  double spu = 200.0;
  eval->add_option("--scene", scene_path)->required();
  eval->add_option("--graph", graph_path)->required();
  eval->add_option("--instances", instances_path)->required();
  eval->add_option("--cloud", eval_cloud, "Ground-truth labelled PLY")->required();
  eval->add_option("--gt", gt_path, "Ground-truth graph JSON")->required();
  eval->add_option("--samples-per-unit", spu)->capture_default_str();

  auto* check = app.add_subcommand("check-grad", "Finite-difference check of every loss term");
  add_shared(check, shared);
  int scenes = 10;
  double h = 1e-5, tol = 1e-4;
  check->add_option("--scenes", scenes)->capture_default_str();
  check->add_option("--step", h)->capture_default_str();
  check->add_option("--tol", tol)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*synth) return cmd_synth(shared, spec);
    if (*fit) return cmd_fit(shared, cloud_path, semantic_path, quiet);
    if (*extract) return cmd_extract_graph(shared, scene_path);
    if (*segment) return cmd_segment_leaves(shared, scene_path);
    if (*eval) return cmd_eval(shared, scene_path, graph_path, instances_path, eval_cloud, gt_path, spu);
    if (*check) return cmd_check_grad(shared, scenes, h, tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
