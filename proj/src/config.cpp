#include "plantprim/config.hpp"

#include "plantprim/io.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <sstream>

namespace plantprim {

using Json = nlohmann::ordered_json;

namespace {

struct Entry {
  std::string key;
  std::function<Json(const RunConfig&)> get;
  std::function<void(RunConfig&, const Json&)> set;
};

template <typename T, typename Field>
Entry field(std::string key, Field f) {
  return Entry{key,
               [f](const RunConfig& c) {
                 RunConfig copy = c;
                 return Json(f(copy));
               },
               [f, key](RunConfig& c, const Json& v) {
                 if constexpr (std::is_same_v<T, bool>) {
                   if (!v.is_boolean()) throw InvalidArgument("config: '" + key + "' must be a boolean");
                 } else if constexpr (std::is_integral_v<T>) {
                   if (!v.is_number_integer()) throw InvalidArgument("config: '" + key + "' must be an integer");
                 } else {
                   if (!v.is_number()) throw InvalidArgument("config: '" + key + "' must be a number");
                 }
                 f(c) = v.get<T>();
               }};
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back(field<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.seed; }));

    e.push_back(field<int>("init.points_per_cluster", [](RunConfig& c) -> auto& { return c.init.points_per_cluster; }));
    e.push_back(field<double>("init.alpha_st", [](RunConfig& c) -> auto& { return c.init.alpha_st; }));
    e.push_back(field<int>("init.apps_per_stp", [](RunConfig& c) -> auto& { return c.init.apps_per_stp; }));
    e.push_back(field<double>("init.elongation_min", [](RunConfig& c) -> auto& { return c.init.elongation_min; }));
    e.push_back(field<double>("init.flatness_max", [](RunConfig& c) -> auto& { return c.init.flatness_max; }));

    for (LossTerm t : kAllLossTerms) {
      const auto idx = static_cast<std::size_t>(t);
      const std::string name(term_name(t));
      e.push_back(field<double>("loss.weight." + name, [idx](RunConfig& c) -> auto& { return c.weights.weight[idx]; }));
      e.push_back(Entry{"loss.enabled." + name, [idx](const RunConfig& c) { return Json(c.weights.enabled[idx]); },
                        [idx, name](RunConfig& c, const Json& v) {
                          if (!v.is_boolean()) throw InvalidArgument("config: 'loss.enabled." + name + "' must be a boolean");
                          c.weights.enabled[idx] = v.get<bool>();
                        }});
    }
    e.push_back(field<double>("loss.tau", [](RunConfig& c) -> auto& { return c.weights.tau; }));
    e.push_back(field<bool>("loss.overlap_mean", [](RunConfig& c) -> auto& { return c.weights.overlap_mean; }));

    e.push_back(field<int>("schedule.warmup_steps", [](RunConfig& c) -> auto& { return c.schedule.warmup_steps; }));
    e.push_back(field<int>("schedule.total_steps", [](RunConfig& c) -> auto& { return c.schedule.total_steps; }));
    e.push_back(field<int>("schedule.densify_stop_step", [](RunConfig& c) -> auto& { return c.schedule.densify_stop_step; }));
    for (LossTerm t : kAllLossTerms) {
      const auto idx = static_cast<std::size_t>(t);
      e.push_back(field<int>("schedule.activation." + std::string(term_name(t)),
                             [idx](RunConfig& c) -> auto& { return c.schedule.activation[idx]; }));
    }
    e.push_back(field<int>("schedule.graph_rebuild_interval",
                           [](RunConfig& c) -> auto& { return c.schedule.graph_rebuild_interval; }));
    e.push_back(Entry{"schedule.rule",
                      [](const RunConfig& c) { return Json(c.schedule.rule == UpdateRule::Adam ? "adam" : "gd"); },
                      [](RunConfig& c, const Json& v) {
                        const std::string s = v.is_string() ? v.get<std::string>() : "";
                        if (s == "adam") {
                          c.schedule.rule = UpdateRule::Adam;
                        } else if (s == "gd") {
                          c.schedule.rule = UpdateRule::GradientDescent;
                        } else {
                          throw InvalidArgument("config: 'schedule.rule' must be \"gd\" or \"adam\"");
                        }
                      }});
    e.push_back(field<double>("schedule.adam_beta1", [](RunConfig& c) -> auto& { return c.schedule.adam_beta1; }));
    e.push_back(field<double>("schedule.adam_beta2", [](RunConfig& c) -> auto& { return c.schedule.adam_beta2; }));
    e.push_back(field<double>("schedule.adam_eps", [](RunConfig& c) -> auto& { return c.schedule.adam_eps; }));
    e.push_back(field<double>("schedule.lr_final_fraction", [](RunConfig& c) -> auto& { return c.schedule.lr_final_fraction; }));
    e.push_back(field<double>("schedule.min_thickness_ratio", [](RunConfig& c) -> auto& { return c.schedule.min_thickness_ratio; }));
    e.push_back(field<double>("schedule.max_center_step", [](RunConfig& c) -> auto& { return c.schedule.max_center_step; }));
    e.push_back(field<double>("schedule.lr.stp_center", [](RunConfig& c) -> auto& { return c.schedule.lr.stp_center; }));
    e.push_back(field<double>("schedule.lr.stp_rotation", [](RunConfig& c) -> auto& { return c.schedule.lr.stp_rotation; }));
    e.push_back(field<double>("schedule.lr.stp_scale", [](RunConfig& c) -> auto& { return c.schedule.lr.stp_scale; }));
    e.push_back(field<double>("schedule.lr.stp_logit", [](RunConfig& c) -> auto& { return c.schedule.lr.stp_logit; }));
    e.push_back(field<double>("schedule.lr.app_center", [](RunConfig& c) -> auto& { return c.schedule.lr.app_center; }));
    e.push_back(field<double>("schedule.lr.app_color", [](RunConfig& c) -> auto& { return c.schedule.lr.app_color; }));
    e.push_back(field<double>("schedule.lr.app_feature", [](RunConfig& c) -> auto& { return c.schedule.lr.app_feature; }));
    e.push_back(field<bool>("schedule.lr.relative_to_scene",
                            [](RunConfig& c) -> auto& { return c.schedule.lr.relative_to_scene; }));

    e.push_back(field<int>("density.max_stps", [](RunConfig& c) -> auto& { return c.density.max_stps; }));
    e.push_back(field<double>("density.densify_grad_threshold",
                              [](RunConfig& c) -> auto& { return c.density.densify_grad_threshold; }));
    e.push_back(field<double>("density.leaf_isotropy_tol",
                              [](RunConfig& c) -> auto& { return c.density.leaf_isotropy_tol; }));
    e.push_back(field<double>("density.stub_aspect_min",
                              [](RunConfig& c) -> auto& { return c.density.stub_aspect_min; }));
    e.push_back(field<double>("density.split_min_aspect",
                              [](RunConfig& c) -> auto& { return c.density.split_min_aspect; }));
    e.push_back(field<double>("density.densify_top_fraction",
                              [](RunConfig& c) -> auto& { return c.density.densify_top_fraction; }));
    e.push_back(field<double>("density.prune_scale_min", [](RunConfig& c) -> auto& { return c.density.prune_scale_min; }));
    e.push_back(field<double>("density.prune_opacity_min", [](RunConfig& c) -> auto& { return c.density.prune_opacity_min; }));
    e.push_back(field<double>("density.merge_radius", [](RunConfig& c) -> auto& { return c.density.merge_radius; }));
    e.push_back(field<double>("density.merge_axis_cos_min", [](RunConfig& c) -> auto& { return c.density.merge_axis_cos_min; }));
    e.push_back(field<double>("density.radius_growth_max", [](RunConfig& c) -> auto& { return c.density.radius_growth_max; }));
    e.push_back(field<double>("density.leaf_merge_radius", [](RunConfig& c) -> auto& { return c.density.leaf_merge_radius; }));
    e.push_back(field<double>("density.leaf_angle_max", [](RunConfig& c) -> auto& { return c.density.leaf_angle_max; }));
    e.push_back(field<int>("density.densify_interval", [](RunConfig& c) -> auto& { return c.density.densify_interval; }));

    e.push_back(field<int>("graph.knn_k", [](RunConfig& c) -> auto& { return c.graph.knn_k; }));
    e.push_back(field<double>("graph.gamma_tan", [](RunConfig& c) -> auto& { return c.graph.gamma_tan; }));
    e.push_back(field<double>("graph.gamma_occ", [](RunConfig& c) -> auto& { return c.graph.gamma_occ; }));
    e.push_back(field<double>("graph.rho_occ", [](RunConfig& c) -> auto& { return c.graph.rho_occ; }));
    e.push_back(field<int>("graph.theta", [](RunConfig& c) -> auto& { return c.graph.theta; }));
    e.push_back(field<int>("graph.samples", [](RunConfig& c) -> auto& { return c.graph.samples; }));
    return e;
  }();
  return entries;
}

}  // namespace

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

std::string run_config_json(const RunConfig& cfg) {
  Json doc = Json::object();
  for (const auto& e : registry()) doc[e.key] = e.get(cfg);
  return doc.dump(1);
}

void apply_run_config(RunConfig& cfg, const std::string& json_text) {
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw InvalidArgument("config: top level must be an object of dotted keys");
  for (const auto& [key, value] : doc.items()) {
    const auto& reg = registry();
    auto it = std::find_if(reg.begin(), reg.end(), [&](const Entry& e) { return e.key == key; });
    if (it == reg.end()) throw InvalidArgument("config: unknown key '" + key + "'");
    it->set(cfg, value);
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  try {
    apply_run_config(cfg, ss.str());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
  return cfg;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << run_config_json(cfg) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace plantprim
