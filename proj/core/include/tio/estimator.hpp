#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tio/backend.hpp"
#include "tio/baro_model.hpp"
#include "tio/ekf.hpp"
#include "tio/simulator.hpp"

namespace tio {

enum class BaroMode { Off, Filtered, Poly, Mlp, Gru };

struct EstimatorToggles {
  bool iir = true;
  BaroMode baro = BaroMode::Filtered;
  bool gradient_gate = true;
  bool orb_check = true;
  bool triangulation_filter = true;
  bool lrf_prior = true;
};

enum class CameraMode { Bearings, Raster };

struct ReplayConfig {
  EstimatorToggles toggles;
  CameraMode camera = CameraMode::Bearings;
  BackendParams backend;
  FrontendParams frontend;  // raster mode only
  int decimation = 10;      // 1200 -> 120 Hz
  double baro_sigma2 = 0.25;      // fixed weight for non-learned modes, m^2
  int init_samples = 400;         // conditioned IMU samples for initialization
  double init_bias_weight = 1e-4;
  // Learned compensator models (required for the matching BaroMode).
  const GruCompensator* gru = nullptr;
  const PolyBaroModel* poly = nullptr;
  const MlpBaroModel* mlp = nullptr;
  // Invoked after every optimized frame; handy for instrumentation.
  std::function<void(const Backend&, const FrameOutput&)> on_frame;
};

struct TrackPoint {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double yaw = 0.0;
};

struct ReplayResult {
  std::vector<TrackPoint> track;       // optimizer output per valid frame
  std::vector<TrackPoint> ekf_track;   // high-rate filter output at IMU rate
  double total_cost = 0.0;
  int frames = 0;
  int lm_iterations = 0;
  // Wall-time per stage, milliseconds (excluded from deterministic reports).
  double ms_preprocess = 0.0;
  double ms_frontend = 0.0;
  double ms_optimize = 0.0;
};

struct EstimatorDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ReplayResult runReplay(const SensorLog& log, const ReplayConfig& cfg);

struct MetricsReport {
  double rmse = 0.0;     // position, m
  double epe = 0.0;      // final position error, m
  double drift_pct = 0.0;
  double z_rmse = 0.0;
  double path_length = 0.0;
  int64_t samples = 0;
};

struct NoOverlap : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Truth is linearly interpolated to the estimate timestamps.
MetricsReport computeMetrics(const std::vector<TrackPoint>& estimate,
                             const std::vector<TruthSample>& truth);

/// Deterministic textual form (fixed precision, no timing fields).
std::string formatMetrics(const MetricsReport& r, uint64_t seed);

}  // namespace tio
