#include "plantprim/primitives.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <string>

namespace plantprim {

Mat3 StructurePrimitive::covariance() const {
  const Mat3 s = scales.asDiagonal();
  return rotation * s * s.transpose() * rotation.transpose();
}

Cylinder to_cylinder(const StructurePrimitive& stp) {
  return Cylinder{stp.center, stp.axis(0), stp.scales[1], 3.0 * stp.scales[0]};
}

Disk to_disk(const StructurePrimitive& stp) {
  return Disk{stp.center, stp.axis(2), 2.0 * stp.scales[0], stp.scales[1], stp.axis(0), stp.axis(1)};
}

PrimitiveClass classify(const StructurePrimitive& stp) {
  return stp.p_branch() >= 0.5 ? PrimitiveClass::Branch : PrimitiveClass::Leaf;
}

void pool_scales(StructurePrimitive& stp) {
  Vec3& s = stp.scales;
  for (int pass = 0; pass < 2; ++pass) {
    if (s[0] < s[1]) s[0] = s[1] = 0.5 * (s[0] + s[1]);
    if (s[1] < s[2]) {
      if (s[0] < (s[1] + s[2]) * 0.5) {
        s[0] = s[1] = s[2] = s.sum() / 3.0;
      } else {
        s[1] = s[2] = 0.5 * (s[1] + s[2]);
      }
    }
  }
}

bool sort_scales(StructurePrimitive& stp) {
  const Vec3& s = stp.scales;
  if (s[0] >= s[1] && s[1] >= s[2]) {
    return false;
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s[a] > s[b]; });
  Vec3 scales;
  Mat3 rot;
  for (int k = 0; k < 3; ++k) {
    scales[k] = s[order[k]];
    rot.col(k) = stp.rotation.col(order[k]);
  }
  if (rot.determinant() < 0.0) {
    rot.col(2) = -rot.col(2);
  }
  stp.scales = scales;
  stp.rotation = rot;
  return true;
}

bool is_valid(const StructurePrimitive& stp, double tol) {
  return is_rotation(stp.rotation, tol) && stp.scales[0] >= stp.scales[1] &&
         stp.scales[1] >= stp.scales[2] && stp.scales[2] > 0.0;
}

void Scene::compact() {
  std::vector<std::size_t> remap(stps.size(), static_cast<std::size_t>(-1));
  std::vector<StructurePrimitive> kept;
  kept.reserve(stps.size());
  for (std::size_t i = 0; i < stps.size(); ++i) {
    if (stps[i].active) {
      remap[i] = kept.size();
      kept.push_back(stps[i]);
    }
  }
  for (auto& app : apps) {
    if (app.parent >= remap.size() || remap[app.parent] == static_cast<std::size_t>(-1)) {
      throw InvalidState("compact: ApP bound to removed structure primitive " + std::to_string(app.parent));
    }
    app.parent = remap[app.parent];
  }
  stps = std::move(kept);
}

void Scene::check_bindings() const {
  for (std::size_t a = 0; a < apps.size(); ++a) {
    const std::size_t p = apps[a].parent;
    if (p >= stps.size() || !stps[p].active) {
      throw InvalidState("ApP " + std::to_string(a) + " has dangling parent index " + std::to_string(p));
    }
  }
}

std::vector<std::vector<std::size_t>> Scene::apps_by_parent() const {
  std::vector<std::vector<std::size_t>> groups(stps.size());
  for (std::size_t a = 0; a < apps.size(); ++a) {
    if (apps[a].parent < groups.size()) {
      groups[apps[a].parent].push_back(a);
    }
  }
  return groups;
}

}  // namespace plantprim
