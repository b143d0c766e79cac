#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tio/geometry.hpp"

namespace tio {

struct InsufficientParallax : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NegativeDepth : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class CandidateStatus { Pending, Verified, Rejected, Admitted };

/// Candidate feature track awaiting batch verification before the backend
/// ever sees it.
struct FeatureCandidate {
  int64_t id = -1;
  std::vector<int64_t> frame_ids;   // time-ordered
  std::vector<Vec3> bearings;       // unit, camera frame of each observing pose
  double first_t = 0.0;
  double last_obs_t = 0.0;
  std::optional<Vec3> point_root;   // triangulation, root (first) camera frame
  double quality = 0.0;
  CandidateStatus status = CandidateStatus::Pending;
  bool fallback = false;            // timed out before meeting obs/parallax criteria
  bool in_central_region = false;   // at root observation (LRF scope rule)
};

struct FilterParams {
  int min_observations = 10;
  double stale_timeout = 0.5;       // s without new observations
  double parallax_deg = 1.5;        // max pairwise bearing angle required
  double inlier_gate_deg = 0.5;     // angular reprojection gate in RANSAC
  double reproj_gate_deg = 0.5;     // admission-time per-measurement gate
  int min_valid = 5;                // feature dropped below this after gating
  double lrf_tol = 0.25;            // relative depth mismatch vs LRF
  int budget = 20;                  // max new features per update
  int top_rule_threshold = 40;      // batch size activating the top-80% rule
  double top_fraction = 0.8;
  int ransac_iterations = 50;
  uint64_t seed = 1;
};

struct TriangulationResult {
  Vec3 point_root = Vec3::Zero();   // root camera frame
  double depth = 0.0;               // along the root bearing
  std::vector<bool> inliers;
  int num_inliers = 0;
};

/// Camera poses are world-from-camera transforms keyed by frame id.
using PoseMap = std::map<int64_t, Pose3>;

/// Two-view midpoint RANSAC with the first observation always in the
/// minimal sample, followed by a linear refit over the consensus set.
/// Throws InsufficientParallax / NegativeDepth.
TriangulationResult triangulateRansac(const FeatureCandidate& c, const PoseMap& poses,
                                      const FilterParams& p = FilterParams());

/// Condition number of the stacked linear triangulation system; +inf for
/// rank-deficient (parallel-ray) geometry. Lower is better.
double qualityScore(const FeatureCandidate& c, const PoseMap& poses);

/// Relative depth agreement with the laser rangefinder. Only applies to
/// features in the central image region; others pass unconditionally.
bool lrfDepthConsistency(const FeatureCandidate& c, double triangulated_depth,
                         double lrf_depth, const FilterParams& p = FilterParams());

/// Rank verified candidates (quality ascending, then observation count
/// descending, then id), apply the top-80% rule for large batches, gate
/// individual measurements against the triangulation, and fill the budget,
/// appending fallback candidates only if slots remain. Returns admitted ids
/// in rank order and flips candidate statuses in place.
std::vector<int64_t> admitBatch(std::vector<FeatureCandidate>& cands, const PoseMap& poses,
                                const FilterParams& p = FilterParams());

}  // namespace tio
