#include "plantprim/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace plantprim {

using Json = nlohmann::ordered_json;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

Json read_json(const std::string& path) {
  auto in = open_in(path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_json(const Json& doc, const std::string& path) {
  auto out = open_out(path);
  out << doc.dump(1) << '\n';
  finish(out, path);
}

std::string fmt_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
  return buf;
}

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Json vecx_json(const VecX& v) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

VecX json_vecx(const Json& j) {
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  return v;
}

Json mat_json(const Mat3& m) {
  Json a = Json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  }
  return a;
}

Mat3 json_mat(const Json& j) {
  if (!j.is_array() || j.size() != 9) throw ParseError("expected a row-major 3x3 matrix");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = j[static_cast<std::size_t>(3 * r + c)].get<double>();
  }
  return m;
}

Json graph_json(const StructureGraph& graph) {
  Json nodes = Json::array();
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& n = graph.nodes[i];
    nodes.push_back({{"id", i},
                     {"x", n.position.x()},
                     {"y", n.position.y()},
                     {"z", n.position.z()},
                     {"stp", n.stp},
                     {"end", n.end}});
  }
  Json edges = Json::array();
  for (const auto& e : graph.edges) {
    edges.push_back({{"i", e.i},
                     {"j", e.j},
                     {"kind", e.kind == EdgeKind::Inner ? "inner" : "cross"},
                     {"radius", e.radius},
                     {"cost", e.cost}});
  }
  return {{"nodes", nodes}, {"edges", edges}};
}

StructureGraph json_graph(const Json& doc, const std::string& path) {
  StructureGraph g;
  try {
    const auto& nodes = doc.at("nodes");
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto& n = nodes[k];
      if (n.at("id").get<std::size_t>() != k) throw ParseError(path + ": node ids must be 0..n-1 in order");
      g.nodes.push_back(GraphNode{Vec3(n.at("x").get<double>(), n.at("y").get<double>(), n.at("z").get<double>()),
                                  n.at("stp").get<long>(), n.at("end").get<int>()});
    }
    for (const auto& e : doc.at("edges")) {
      GraphEdge edge;
      edge.i = e.at("i").get<std::size_t>();
      edge.j = e.at("j").get<std::size_t>();
      const auto kind = e.at("kind").get<std::string>();
      if (kind != "inner" && kind != "cross") throw ParseError(path + ": unknown edge kind '" + kind + "'");
      edge.kind = kind == "inner" ? EdgeKind::Inner : EdgeKind::Cross;
      edge.radius = e.at("radius").get<double>();
      edge.cost = e.value("cost", 0.0);
      if (edge.i >= g.nodes.size() || edge.j >= g.nodes.size()) {
        throw ParseError(path + ": edge references a missing node");
      }
      g.edges.push_back(edge);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return g;
}

}  // namespace

// --- PLY ---------------------------------------------------------------------

void save_cloud(const PlantCloud& cloud, const std::string& path) {
  cloud.validate();
  auto out = open_out(path);
  const std::size_t dim = cloud.feature_dim();
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << '\n';
  out << "property float x\nproperty float y\nproperty float z\n";
  const bool colors = !cloud.colors.empty();
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  for (std::size_t k = 0; k < dim; ++k) out << "property float feature_" << k << '\n';
  if (cloud.has_labels()) out << "property uchar gt_branch\n";
  if (cloud.has_instances()) out << "property int gt_instance\n";
  out << "end_header\n";
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    const auto& q = cloud.points[p];
    out << fmt_float(q.x()) << ' ' << fmt_float(q.y()) << ' ' << fmt_float(q.z());
    if (colors) {
      for (int c = 0; c < 3; ++c) {
        out << ' ' << static_cast<int>(std::lround(std::clamp(cloud.colors[p][c], 0.0, 1.0) * 255.0));
      }
    }
    for (std::size_t k = 0; k < dim; ++k) out << ' ' << fmt_float(cloud.features[p][static_cast<Eigen::Index>(k)]);
    if (cloud.has_labels()) out << ' ' << (cloud.gt_branch[p] ? 1 : 0);
    if (cloud.has_instances()) out << ' ' << cloud.gt_instance[p];
    out << '\n';
  }
  finish(out, path);
}

PlantCloud load_cloud(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  long line_no = 0;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError(path + ":" + std::to_string(line_no) + ": " + what);
  };
  auto next = [&]() {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next() || line != "ply") throw fail("missing 'ply' magic");
  if (!next() || line.rfind("format ascii", 0) != 0) throw fail("only 'format ascii 1.0' is supported");

  long count = -1;
  std::vector<std::string> props;
  bool in_vertex = false;
  while (true) {
    if (!next()) throw fail("unexpected end of header");
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "comment" || word == "obj_info" || word.empty()) continue;
    if (word == "end_header") break;
    if (word == "element") {
      std::string name;
      long n = -1;
      if (!(ss >> name >> n) || n < 0) throw fail("malformed element line");
      if (name != "vertex") throw fail("unsupported element '" + name + "'");
      count = n;
      in_vertex = true;
    } else if (word == "property") {
      if (!in_vertex) throw fail("property before element");
      std::string type, name;
      if (!(ss >> type >> name)) throw fail("malformed property line");
      if (type == "list") throw fail("list properties are not supported");
      props.push_back(name);
    } else {
      throw fail("unknown header keyword '" + word + "'");
    }
  }
  if (count < 0) throw fail("missing 'element vertex'");

  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < props.size(); ++k) col[props[k]] = k;
  for (const char* need : {"x", "y", "z"}) {
    if (!col.contains(need)) throw fail(std::string("missing property '") + need + "'");
  }
  const bool colors = col.contains("red") && col.contains("green") && col.contains("blue");
  std::size_t dim = 0;
  while (col.contains("feature_" + std::to_string(dim))) ++dim;
  const bool labels = col.contains("gt_branch");
  const bool instances = col.contains("gt_instance");

  PlantCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(count));
  std::vector<double> vals(props.size());
  for (long v = 0; v < count; ++v) {
    if (!next()) {
      throw fail("truncated vertex data: expected " + std::to_string(count) + " vertices, found " + std::to_string(v));
    }
    std::istringstream ss(line);
    for (std::size_t k = 0; k < props.size(); ++k) {
      if (!(ss >> vals[k])) {
        throw fail("expected " + std::to_string(props.size()) + " values per vertex, found " + std::to_string(k));
      }
    }
    std::string extra;
    if (ss >> extra) throw fail("expected " + std::to_string(props.size()) + " values per vertex, found more");
    cloud.points.emplace_back(vals[col["x"]], vals[col["y"]], vals[col["z"]]);
    if (colors) cloud.colors.emplace_back(vals[col["red"]] / 255.0, vals[col["green"]] / 255.0, vals[col["blue"]] / 255.0);
    if (dim > 0) {
      VecX f(static_cast<Eigen::Index>(dim));
      for (std::size_t k = 0; k < dim; ++k) f[static_cast<Eigen::Index>(k)] = vals[col["feature_" + std::to_string(k)]];
      cloud.features.push_back(std::move(f));
    }
    if (labels) cloud.gt_branch.push_back(vals[col["gt_branch"]] != 0.0);
    if (instances) cloud.gt_instance.push_back(static_cast<int>(vals[col["gt_instance"]]));
  }
  if (!colors) cloud.colors.assign(cloud.points.size(), Vec3::Constant(0.5));
  try {
    cloud.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(path + ": " + e.what());
  }
  return cloud;
}

// --- graph / primitives ------------------------------------------------------

void export_graph(const StructureGraph& graph, const std::string& path) { write_json(graph_json(graph), path); }

StructureGraph import_graph(const std::string& path) { return json_graph(read_json(path), path); }

void export_primitives(const Scene& scene, const std::string& path) {
  Json stps = Json::array();
  for (const auto& s : scene.stps) {
    Json j = {{"center", vec_json(s.center)},
              {"rotation", mat_json(s.rotation)},
              {"scales", vec_json(s.scales)},
              {"branch_logit", s.branch_logit},
              {"p_st", s.p_branch()}};
    if (classify(s) == PrimitiveClass::Branch) {
      const Cylinder cy = to_cylinder(s);
      j["kind"] = "cylinder";
      j["cylinder"] = {{"center", vec_json(cy.center)},
                       {"axis", vec_json(cy.axis)},
                       {"radius", cy.radius},
                       {"length", cy.length}};
    } else {
      const Disk di = to_disk(s);
      j["kind"] = "disk";
      j["disk"] = {{"center", vec_json(di.center)}, {"normal", vec_json(di.normal)}, {"major", di.major},
                   {"minor", di.minor},             {"e1", vec_json(di.e1)},         {"e2", vec_json(di.e2)}};
    }
    stps.push_back(std::move(j));
  }
  Json apps = Json::array();
  for (const auto& a : scene.apps) {
    apps.push_back({{"center", vec_json(a.center)},
                    {"rotation", mat_json(a.rotation)},
                    {"scales", vec_json(a.scales)},
                    {"color", vec_json(a.color)},
                    {"opacity", a.opacity},
                    {"feature", vecx_json(a.feature)},
                    {"parent", a.parent}});
  }
  write_json({{"feature_dim", scene.feature_dim()}, {"stps", stps}, {"apps", apps}}, path);
}

Scene import_primitives(const std::string& path) {
  const Json doc = read_json(path);
  Scene scene;
  try {
    for (const auto& j : doc.at("stps")) {
      StructurePrimitive s;
      s.center = json_vec(j.at("center"));
      s.rotation = json_mat(j.at("rotation"));
      s.scales = json_vec(j.at("scales"));
      s.branch_logit = j.at("branch_logit").get<double>();
      scene.stps.push_back(s);
    }
    for (const auto& j : doc.at("apps")) {
      AppearancePrimitive a;
      a.center = json_vec(j.at("center"));
      a.rotation = json_mat(j.at("rotation"));
      a.scales = json_vec(j.at("scales"));
      a.color = json_vec(j.at("color"));
      a.opacity = j.at("opacity").get<double>();
      a.feature = json_vecx(j.at("feature"));
      a.parent = j.at("parent").get<std::size_t>();
      scene.apps.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    scene.check_bindings();
  } catch (const InvalidState& e) {
    throw ParseError(path + ": " + e.what());
  }
  return scene;
}

// --- meshes ------------------------------------------------------------------

Mesh tessellate_cylinder(const Cylinder& cy, int segments) {
  if (segments < 3) throw InvalidArgument("tessellate_cylinder: need >= 3 segments");
  const Mat3 f = frame_from_normal(cy.axis, any_orthogonal(cy.axis));
  const Vec3 top = cy.center + 0.5 * cy.length * cy.axis;
  const Vec3 bottom = cy.center - 0.5 * cy.length * cy.axis;
  const auto n = static_cast<std::size_t>(segments);
  Mesh m;
  for (const Vec3& c : {top, bottom}) {
    for (std::size_t k = 0; k < n; ++k) {
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      m.vertices.push_back(c + cy.radius * (std::cos(phi) * f.col(0) + std::sin(phi) * f.col(1)));
    }
  }
  m.vertices.push_back(top);
  m.vertices.push_back(bottom);
  const std::size_t ct = 2 * n;
  const std::size_t cb = 2 * n + 1;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t k1 = (k + 1) % n;
    m.faces.push_back({k, n + k, n + k1});
    m.faces.push_back({k, n + k1, k1});
    m.faces.push_back({ct, k, k1});
    m.faces.push_back({cb, n + k1, n + k});
  }
  return m;
}

Mesh tessellate_disk(const Disk& di, int segments) {
  if (segments < 3) throw InvalidArgument("tessellate_disk: need >= 3 segments");
  const auto n = static_cast<std::size_t>(segments);
  Mesh m;
  for (std::size_t k = 0; k < n; ++k) {
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    m.vertices.push_back(di.center + di.major * std::cos(phi) * di.e1 + di.minor * std::sin(phi) * di.e2);
  }
  m.vertices.push_back(di.center);
  for (std::size_t k = 0; k < n; ++k) m.faces.push_back({n, k, (k + 1) % n});
  return m;
}

bool is_closed_manifold(const Mesh& mesh) {
  std::map<std::pair<std::size_t, std::size_t>, int> directed;
  for (const auto& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      const std::size_t a = f[static_cast<std::size_t>(e)];
      const std::size_t b = f[static_cast<std::size_t>((e + 1) % 3)];
      if (a == b || a >= mesh.vertices.size() || b >= mesh.vertices.size()) return false;
      if (++directed[{a, b}] > 1) return false;
    }
  }
  for (const auto& [edge, count] : directed) {
    if (!directed.contains({edge.second, edge.first})) return false;
  }
  return true;
}

void export_obj(const Scene& scene, const std::string& path, int segments) {
  auto out = open_out(path);
  std::size_t base = 1;
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    const auto& s = scene.stps[i];
    if (!s.active) continue;
    const bool branch = classify(s) == PrimitiveClass::Branch;
    const Mesh m = branch ? tessellate_cylinder(to_cylinder(s), segments) : tessellate_disk(to_disk(s), segments);
    out << "o " << (branch ? "cylinder_" : "disk_") << i << '\n';
    for (const auto& v : m.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& f : m.faces) out << "f " << f[0] + base << ' ' << f[1] + base << ' ' << f[2] + base << '\n';
    base += m.vertices.size();
  }
  finish(out, path);
}

// --- small documents ---------------------------------------------------------

void save_instances(const std::vector<int>& labels, const std::string& path) {
  int count = 0;
  for (int l : labels) count = std::max(count, l + 1);
  write_json({{"instances", count}, {"labels", labels}}, path);
}

std::vector<int> load_instances(const std::string& path) {
  const Json doc = read_json(path);
  try {
    return doc.at("labels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void save_semantic(const SemanticReference& ref, const std::string& path) {
  write_json({{"branch", vecx_json(ref.branch)}, {"leaf", vecx_json(ref.leaf)}}, path);
}

SemanticReference load_semantic(const std::string& path) {
  const Json doc = read_json(path);
  try {
    return SemanticReference::normalized(json_vecx(doc.at("branch")), json_vecx(doc.at("leaf")));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string metrics_to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json matches = Json::array();
  for (const auto& m : r.instance_matches) {
    matches.push_back({{"predicted", m.predicted}, {"truth", m.truth}, {"cd", m.cd}});
  }
  const Json doc = {{"branch_chamfer", opt(r.branch_chamfer)},
                    {"structural_error", opt(r.structural_error)},
                    {"leaf_instance_cd", opt(r.leaf_instance_cd)},
                    {"instance_matches", matches},
                    {"label_accuracy", opt(r.label_accuracy)},
                    {"counts",
                     {{"stps", r.stps},
                      {"branch_stps", r.branch_stps},
                      {"apps", r.apps},
                      {"graph_nodes", r.graph_nodes},
                      {"graph_edges", r.graph_edges},
                      {"predicted_instances", r.predicted_instances},
                      {"gt_instances", r.gt_instances}}}};
  return doc.dump(1);
}

void save_metrics(const MetricsReport& report, const std::string& path) {
  auto out = open_out(path);
  out << metrics_to_json(report) << '\n';
  finish(out, path);
}

std::string log_record_json(const LogRecord& rec) {
  Json j = {{"step", rec.step}, {"stage", rec.stage}};
  for (LossTerm t : kAllLossTerms) j[std::string(term_name(t))] = rec.values[static_cast<std::size_t>(t)];
  j["total"] = rec.total;
  j["stps"] = rec.stps;
  j["apps"] = rec.apps;
  j["branch_stps"] = rec.branch_stps;
  j["graph_edges"] = rec.graph_edges;
  return j.dump();
}

void save_log(const std::vector<LogRecord>& history, const std::string& path) {
  auto out = open_out(path);
  for (const auto& rec : history) out << log_record_json(rec) << '\n';
  finish(out, path);
}

void save_ground_truth(const StructureGraph& graph, int leaf_instances, const std::string& path) {
  Json doc = graph_json(graph);
  doc["leaf_instances"] = leaf_instances;
  write_json(doc, path);
}

StructureGraph load_ground_truth(const std::string& path, int* leaf_instances) {
  const Json doc = read_json(path);
  if (leaf_instances != nullptr) *leaf_instances = doc.value("leaf_instances", 0);
  return json_graph(doc, path);
}

}  // namespace plantprim
