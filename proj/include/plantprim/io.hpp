#pragma once

#include "plantprim/cloud.hpp"
#include "plantprim/losses.hpp"
#include "plantprim/metrics.hpp"
#include "plantprim/optimizer.hpp"
#include "plantprim/primitives.hpp"
#include "plantprim/structgraph.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace plantprim {

/// Parse failure; the message carries the path and line number.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened or written; the message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// ASCII PLY with x y z, red green blue (uchar), feature_0.. (float),
/// gt_branch (uchar), gt_instance (int). Values are stored as float32.
void save_cloud(const PlantCloud& cloud, const std::string& path);
PlantCloud load_cloud(const std::string& path);

/// {"nodes": [{id, x, y, z, stp, end}], "edges": [{i, j, kind, radius}]}
void export_graph(const StructureGraph& graph, const std::string& path);
StructureGraph import_graph(const std::string& path);

/// Full parameter dump plus the explicit cylinder / disk of every StP.
void export_primitives(const Scene& scene, const std::string& path);
Scene import_primitives(const std::string& path);

/// Cylinders (closed, `segments` around) and disks (triangle fans) for every active StP.
void export_obj(const Scene& scene, const std::string& path, int segments = 16);

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;
};

/// Closed cylinder: 2*segments ring vertices plus two cap centers.
Mesh tessellate_cylinder(const Cylinder& cy, int segments);
/// Ellipse fan: rim vertices plus the center.
Mesh tessellate_disk(const Disk& di, int segments);
/// Every undirected edge shared by exactly two faces, consistently oriented.
bool is_closed_manifold(const Mesh& mesh);

void save_instances(const std::vector<int>& labels, const std::string& path);
std::vector<int> load_instances(const std::string& path);

void save_semantic(const SemanticReference& ref, const std::string& path);
SemanticReference load_semantic(const std::string& path);

void save_metrics(const MetricsReport& report, const std::string& path);
std::string metrics_to_json(const MetricsReport& report);

/// One JSON object per line.
std::string log_record_json(const LogRecord& rec);
void save_log(const std::vector<LogRecord>& history, const std::string& path);

/// Ground-truth bundle written by `synth`: graph plus the leaf instance count.
void save_ground_truth(const StructureGraph& graph, int leaf_instances, const std::string& path);
StructureGraph load_ground_truth(const std::string& path, int* leaf_instances = nullptr);

}  // namespace plantprim
