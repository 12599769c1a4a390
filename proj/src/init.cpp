#include "plantprim/init.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <numbers>
#include <random>
#include <string>

namespace plantprim {

namespace {

constexpr int kMaxLloydIterations = 100;
constexpr double kCovarianceEpsilon = 1e-12;
constexpr double kScaleFloor = 1e-6;

}  // namespace

void InitConfig::validate() const {
  if (points_per_cluster < 1 || apps_per_stp < 1) {
    throw InvalidArgument("init: points_per_cluster and apps_per_stp must be >= 1");
  }
  if (!(alpha_st > 0.0) || !(elongation_min > 0.0) || !(flatness_max > 0.0)) {
    throw InvalidArgument("init: alpha_st and anisotropy thresholds must be positive");
  }
}

std::vector<int> kmeans(std::span<const Vec3> points, int k, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw InvalidArgument("kmeans: need 1 <= k <= N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  }
  std::mt19937_64 rng(seed);

  // k-means++ seeding
  std::vector<Vec3> centers;
  centers.reserve(static_cast<std::size_t>(k));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  centers.push_back(points[pick(rng)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = (points[i] - centers[0]).squaredNorm();
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (centers.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t chosen = 0;
    if (total <= 0.0) {
      chosen = pick(rng);
    } else {
      const double target = unit(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centers.push_back(points[chosen]);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points[i] - centers.back()).squaredNorm());
    }
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points[i] - centers[static_cast<std::size_t>(c)]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }

    // Re-seed empty clusters at the point farthest from its own center.
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (int a : assign) ++counts[static_cast<std::size_t>(a)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto a = static_cast<std::size_t>(assign[i]);
        if (counts[a] <= 1) continue;
        const double d = (points[i] - centers[a]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[static_cast<std::size_t>(assign[far])];
      assign[far] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      changed = true;
    }

    std::vector<Vec3> sums(static_cast<std::size_t>(k), Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i) {
      sums[static_cast<std::size_t>(assign[i])] += points[i];
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      centers[c] = sums[c] / static_cast<double>(counts[c]);
    }
    if (!changed) break;
  }
  return assign;
}

PcaResult pca_cluster(std::span<const Vec3> points) {
  if (points.empty()) {
    throw InvalidArgument("pca_cluster: empty cluster");
  }
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());
  cov += kCovarianceEpsilon * Mat3::Identity();

  Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  PcaResult out;
  out.mean = mean;
  for (int k = 0; k < 3; ++k) {
    out.eigenvalues[k] = std::max(0.0, solver.eigenvalues()[2 - k]);
    out.eigenvectors.col(k) = solver.eigenvectors().col(2 - k).normalized();
  }
  if (out.eigenvectors.determinant() < 0.0) {
    out.eigenvectors.col(2) = -out.eigenvectors.col(2);
  }
  return out;
}

int cluster_count(std::size_t n, int points_per_cluster) {
  return std::max(1, static_cast<int>(n / static_cast<std::size_t>(points_per_cluster)));
}

std::vector<StructurePrimitive> init_stps(const PlantCloud& cloud, const InitConfig& config) {
  cloud.validate();
  config.validate();
  const int k = cluster_count(cloud.size(), config.points_per_cluster);
  const std::vector<int> assign = kmeans(cloud.points, k, config.seed);

  std::vector<std::vector<Vec3>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    members[static_cast<std::size_t>(assign[i])].push_back(cloud.points[i]);
  }

  std::vector<StructurePrimitive> stps;
  stps.reserve(members.size());
  for (const auto& cluster : members) {
    const PcaResult pca = pca_cluster(cluster);
    StructurePrimitive stp;
    stp.center = pca.mean;
    stp.rotation = pca.eigenvectors;
    const Vec3 sigma = pca.eigenvalues.cwiseSqrt();
    for (int j = 0; j < 3; ++j) {
      stp.scales[j] = std::max(kScaleFloor, config.alpha_st * sigma[j]);
    }
    sort_scales(stp);

    const double elongation = sigma[1] > 0.0 ? sigma[0] / sigma[1] : std::numeric_limits<double>::infinity();
    const double flatness = sigma[0] > 0.0 ? sigma[2] / sigma[0] : 1.0;
    const bool branch_like = elongation > config.elongation_min && flatness < config.flatness_max;
    stp.branch_logit = logit(branch_like ? kBranchLikeProbability : kLeafLikeProbability);
    stps.push_back(stp);
  }
  return stps;
}

std::vector<AppearancePrimitive> sample_apps(const StructurePrimitive& stp, std::size_t stp_index, int n,
                                             std::uint64_t seed, const PlantCloud& cloud, const KdTree& cloud_index) {
  std::vector<AppearancePrimitive> apps;
  if (n < 1) return apps;
  apps.reserve(static_cast<std::size_t>(n));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t dim = cloud.feature_dim();

  const bool branch = classify(stp) == PrimitiveClass::Branch;
  double area = 0.0;
  if (branch) {
    const Cylinder cy = to_cylinder(stp);
    area = 2.0 * std::numbers::pi * cy.radius * cy.length;
  } else {
    const Disk di = to_disk(stp);
    area = std::numbers::pi * di.major * di.minor;
  }
  const double footprint = std::sqrt(area / n) / 2.0;

  for (int i = 0; i < n; ++i) {
    Vec3 x;
    Mat3 frame;
    if (branch) {
      const Cylinder cy = to_cylinder(stp);
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      const double h = (unit(rng) - 0.5) * cy.length;
      const Vec3 radial = std::cos(angle) * stp.axis(1) + std::sin(angle) * stp.axis(2);
      x = cy.center + h * cy.axis + cy.radius * radial;
      frame = frame_from_normal(radial, cy.axis);
    } else {
      const Disk di = to_disk(stp);
      const double r = std::sqrt(unit(rng));
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      x = di.center + di.major * r * std::cos(angle) * di.e1 + di.minor * r * std::sin(angle) * di.e2;
      frame = frame_from_normal(di.normal, di.e1);
    }
    AppearancePrimitive app;
    app.center = x;
    app.rotation = frame;
    app.scales = Vec3(footprint, footprint, 0.0);
    app.opacity = 1.0;
    app.parent = stp_index;
    const std::size_t nn = cloud_index.nearest(x).index;
    app.color = cloud.colors[nn];
    app.feature = dim > 0 ? cloud.features[nn] : VecX();
    apps.push_back(std::move(app));
  }
  return apps;
}

Scene init_scene(const PlantCloud& cloud, const InitConfig& config) {
  Scene scene;
  scene.stps = init_stps(cloud, config);
  const KdTree index(cloud.points);
  std::seed_seq seq{config.seed, std::uint64_t{0x5eed}};
  std::mt19937_64 seeder(seq);
  for (std::size_t i = 0; i < scene.stps.size(); ++i) {
    auto apps = sample_apps(scene.stps[i], i, config.apps_per_stp, seeder(), cloud, index);
    scene.apps.insert(scene.apps.end(), std::make_move_iterator(apps.begin()), std::make_move_iterator(apps.end()));
  }
  return scene;
}

}  // namespace plantprim
