#include "tio/feature_filter.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace tio {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Rng {
  uint64_t s;
  explicit Rng(uint64_t seed) : s(seed ? seed : 0x9e3779b97f4a7c15ull) {}
  uint64_t next() {
    s ^= s >> 12;
    s ^= s << 25;
    s ^= s >> 27;
    return s * 0x2545f4914f6cdd1dull;
  }
  uint32_t bounded(uint32_t n) { return uint32_t(next() % n); }
};

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit, world frame
};

std::vector<Ray> worldRays(const FeatureCandidate& c, const PoseMap& poses) {
  std::vector<Ray> rays;
  rays.reserve(c.bearings.size());
  for (size_t k = 0; k < c.bearings.size(); ++k) {
    const Pose3& T = poses.at(c.frame_ids[k]);
    rays.push_back({T.translation(), T.rotation().matrix() * c.bearings[k]});
  }
  return rays;
}

// Midpoint of the common perpendicular of two rays.
std::optional<Vec3> midpoint(const Ray& a, const Ray& b) {
  const Vec3 w0 = a.origin - b.origin;
  const double d_ab = a.dir.dot(b.dir);
  const double denom = 1.0 - d_ab * d_ab;
  if (denom < 1e-12) return std::nullopt;
  const double ta = (d_ab * w0.dot(b.dir) - w0.dot(a.dir)) / denom;
  const double tb = (w0.dot(b.dir) - d_ab * w0.dot(a.dir)) / denom;
  return 0.5 * (a.origin + ta * a.dir + b.origin + tb * b.dir);
}

double angularError(const Ray& r, const Vec3& point_world) {
  const Vec3 pred = (point_world - r.origin).normalized();
  return std::acos(std::clamp(pred.dot(r.dir), -1.0, 1.0));
}

// Least-squares point minimizing perpendicular distance to all given rays.
std::optional<Vec3> refitLinear(const std::vector<Ray>& rays, const std::vector<bool>& mask) {
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (size_t k = 0; k < rays.size(); ++k) {
    if (!mask[k]) continue;
    const Mat3 proj = Mat3::Identity() - rays[k].dir * rays[k].dir.transpose();
    a += proj;
    b += proj * rays[k].origin;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(a);
  if (es.eigenvalues().minCoeff() < 1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()))
    return std::nullopt;
  return Vec3(a.ldlt().solve(b));
}

double maxPairwiseAngle(const std::vector<Ray>& rays) {
  double best = 0.0;
  for (size_t i = 0; i < rays.size(); ++i)
    for (size_t j = i + 1; j < rays.size(); ++j)
      best = std::max(best, std::acos(std::clamp(rays[i].dir.dot(rays[j].dir), -1.0, 1.0)));
  return best;
}

}  // namespace

TriangulationResult triangulateRansac(const FeatureCandidate& c, const PoseMap& poses,
                                      const FilterParams& p) {
  const int n = int(c.bearings.size());
  if (n < 2) throw InsufficientParallax("triangulateRansac: fewer than 2 observations");
  const auto rays = worldRays(c, poses);
  if (maxPairwiseAngle(rays) < p.parallax_deg * kDeg)
    throw InsufficientParallax("triangulateRansac: max pairwise bearing angle below threshold");

  Rng rng(p.seed ^ (0x9e3779b97f4a7c15ull * uint64_t(c.id + 1)));
  const double gate = p.inlier_gate_deg * kDeg;

  TriangulationResult best;
  for (int it = 0; it < p.ransac_iterations; ++it) {
    const int j = (n == 2) ? 1 : int(1 + rng.bounded(uint32_t(n - 1)));
    const auto mid = midpoint(rays[0], rays[j]);
    if (!mid) continue;
    std::vector<bool> inliers(n, false);
    int count = 0;
    for (int k = 0; k < n; ++k) {
      if (angularError(rays[k], *mid) < gate) {
        inliers[k] = true;
        ++count;
      }
    }
    if (count > best.num_inliers) {
      best.num_inliers = count;
      best.inliers = std::move(inliers);
      best.point_root = *mid;  // world for now; converted below
    }
    if (n == 2) break;
  }
  if (best.num_inliers < 2)
    throw InsufficientParallax("triangulateRansac: no consistent two-view hypothesis");

  auto refined = refitLinear(rays, best.inliers);
  const Vec3 point_world = refined.value_or(best.point_root);

  const Pose3& root = poses.at(c.frame_ids[0]);
  const Vec3 point_root = root.inverse() * point_world;
  const double depth = c.bearings[0].dot(point_root);
  if (depth <= 0.0) throw NegativeDepth("triangulateRansac: point behind the root camera");

  best.point_root = point_root;
  best.depth = depth;
  return best;
}

double qualityScore(const FeatureCandidate& c, const PoseMap& poses) {
  const auto rays = worldRays(c, poses);
  Eigen::MatrixXd a(3 * rays.size(), 3);
  for (size_t k = 0; k < rays.size(); ++k)
    a.middleRows<3>(3 * long(k)) = Mat3::Identity() - rays[k].dir * rays[k].dir.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin < 1e-12 * std::max(1.0, smax)) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

bool lrfDepthConsistency(const FeatureCandidate& c, double triangulated_depth,
                         double lrf_depth, const FilterParams& p) {
  if (!c.in_central_region) return true;
  if (lrf_depth <= 0.0) return true;
  return std::abs(triangulated_depth - lrf_depth) / lrf_depth <= p.lrf_tol;
}

namespace {

// Per-measurement angular gate against the final triangulation; feature
// survives only if enough measurements remain.
bool passesReprojectionGate(const FeatureCandidate& c, const PoseMap& poses,
                            const Vec3& point_root, const FilterParams& p) {
  const Pose3& root = poses.at(c.frame_ids[0]);
  const Vec3 point_world = root * point_root;
  int valid = 0;
  for (size_t k = 0; k < c.bearings.size(); ++k) {
    const Pose3& T = poses.at(c.frame_ids[k]);
    const Ray r{T.translation(), T.rotation().matrix() * c.bearings[k]};
    if (angularError(r, point_world) <= p.reproj_gate_deg * kDeg) ++valid;
  }
  return valid >= p.min_valid || valid == int(c.bearings.size());
}

}  // namespace

std::vector<int64_t> admitBatch(std::vector<FeatureCandidate>& cands, const PoseMap& poses,
                                const FilterParams& p) {
  std::vector<FeatureCandidate*> verified, fallback;
  for (auto& c : cands) {
    if (c.status != CandidateStatus::Verified) continue;
    (c.fallback ? fallback : verified).push_back(&c);
  }

  auto rank = [](const FeatureCandidate* a, const FeatureCandidate* b) {
    if (a->quality != b->quality) return a->quality < b->quality;
    if (a->bearings.size() != b->bearings.size()) return a->bearings.size() > b->bearings.size();
    return a->id < b->id;
  };
  std::sort(verified.begin(), verified.end(), rank);
  std::sort(fallback.begin(), fallback.end(), rank);

  if (int(verified.size()) > p.top_rule_threshold) {
    const size_t keep = size_t(std::floor(p.top_fraction * double(verified.size())));
    for (size_t k = keep; k < verified.size(); ++k)
      verified[k]->status = CandidateStatus::Rejected;
    verified.resize(keep);
  }

  std::vector<int64_t> admitted;
  auto try_admit = [&](FeatureCandidate* c) {
    if (int(admitted.size()) >= p.budget) return;
    if (c->point_root && !passesReprojectionGate(*c, poses, *c->point_root, p)) {
      c->status = CandidateStatus::Rejected;
      return;
    }
    c->status = CandidateStatus::Admitted;
    admitted.push_back(c->id);
  };
  for (auto* c : verified) try_admit(c);
  for (auto* c : fallback) try_admit(c);
  return admitted;
}

}  // namespace tio
