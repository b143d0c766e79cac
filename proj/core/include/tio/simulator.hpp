#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tio/baro_model.hpp"
#include "tio/frontend.hpp"
#include "tio/image.hpp"
#include "tio/signal.hpp"
#include "tio/trajectory.hpp"

namespace tio {

struct VibrationTone {
  double freq_hz = 0.0;
  double accel_amp = 0.0;  // m/s^2 at cruise speed (scales with |v|/cruise)
  double gyro_amp = 0.0;   // rad/s at cruise speed
};

struct SensorSuiteConfig {
  double imu_rate = 1200.0;
  double frame_rate = 30.0;
  double baro_rate = 30.0;
  double lrf_rate = 10.0;
  double att_rate = 10.0;

  // IMU noise (continuous densities match the estimator defaults).
  double sigma_g = 1.7e-4;
  double sigma_a = 2.0e-3;
  double sigma_bg_walk = 1.0e-5;
  double sigma_ba_walk = 1.0e-4;
  Vec3 gyro_bias0 = Vec3(0.004, -0.002, 0.003);
  Vec3 accel_bias0 = Vec3(0.03, -0.02, 0.05);
  // Narrowband airframe vibration, all tones above the 50 Hz prefilter
  // cutoff; 119 Hz folds to 1 Hz after 10x decimation without the filter.
  std::vector<VibrationTone> vibration = {
      {119.0, 0.8, 0.004}, {183.0, 0.5, 0.002}, {307.0, 0.3, 0.001}};
  double vibration_ref_speed = 30.0;
  double vibration_floor = 0.1;  // fraction present even at hover

  // Barometer: static-pressure error through a first-order lag.
  double sppe_k1 = 0.0167;   // m per (m/s)^2
  double sppe_k2 = 0.005;    // m per (m/s^2) of body-x acceleration
  double sppe_tau = 0.8;     // s
  double baro_sigma = 0.08;  // white noise, m
  double baro_colored_sigma = 0.05;  // AR(1) noise, m
  double baro_colored_alpha = 0.995;

  // Laser rangefinder.
  double lrf_sigma = 0.02;
  double lrf_spike_prob = 0.02;
  double lrf_spike_mag = 8.0;  // m

  // Attitude (heading) reference.
  double att_yaw_sigma = 0.01;      // rad
  double att_yaw_bias_walk = 2e-5;  // rad/sqrt(s), mean-reverting
  double att_yaw_bias_max = 0.02;   // rad

  // Camera / landmarks.
  PinholeIntrinsics intrinsics;
  int image_width = 640;
  int image_height = 512;
  double px_noise = 0.3;
  double landmark_density = 0.02;  // per m^2
  double landmark_cell = 50.0;     // m
  int max_obs_per_frame = 150;

  // NUC / flat-field correction.
  double ffc_interval = 90.0;       // s between requests
  double ffc_dropout = 0.4;         // s of blanked frames
  double ffc_v_max = 5.0;           // m/s
  double ffc_omega_max = 0.5;       // rad/s
  double ffc_max_defer = 120.0;     // s

  uint64_t seed = 1;
};

/// Flat-field-correction trigger policy: a pending request executes
/// immediately once linear and angular rates are low, and is forced after
/// the maximum deferral.
class FfcScheduler {
 public:
  struct Params {
    double v_max = 5.0;
    double omega_max = 0.5;
    double max_defer = 120.0;
    double dropout_duration = 0.4;
  };
  FfcScheduler() = default;
  explicit FfcScheduler(const Params& p) : p_(p) {}

  void request(double t);
  /// Advance the policy; true while frames are blanked by a NUC.
  bool update(double t, double v, double omega);
  bool pending() const { return pending_; }

 private:
  Params p_;
  bool pending_ = false;
  double request_t_ = 0.0;
  double dropout_end_ = -1.0;
};

struct SimFrame {
  double t = 0.0;
  bool valid = true;
  std::vector<Observation> obs;  // bearings mode
};

struct LrfRecord {
  double t = 0.0;
  double range = 0.0;
};
struct AttRecord {
  double t = 0.0;
  double yaw = 0.0;
};
struct BaroSample {
  double t = 0.0;
  double altitude = 0.0;  // raw, SPPE-corrupted
};

struct SensorLog {
  std::vector<ImuSample> imu;
  std::vector<SimFrame> frames;
  std::vector<BaroSample> baro;
  std::vector<LrfRecord> lrf;
  std::vector<AttRecord> att;
  std::vector<TruthSample> truth;  // at frame rate
  TrajectorySpec spec;
  SensorSuiteConfig config;
};

SensorLog simulate(const TrajectorySpec& spec, const SensorSuiteConfig& config);

/// Training corpus for the pressure-error compensator: features from
/// truth kinematics, raw baro from the same generative model.
BaroLog simulateBaroLog(const std::vector<TruthSample>& truth, const SensorSuiteConfig& config,
                        double rate_hz = 30.0);

/// Raster fidelity mode: Gaussian-blob landmarks on a 16-bit canvas with
/// fixed-pattern cross-hatch and a per-NUC-epoch offset.
Image16 renderFrame(const TruthSample& state, const SensorSuiteConfig& config, double t,
                    int nuc_epoch);

void saveSensorLog(const std::string& dir, const SensorLog& log);
SensorLog loadSensorLog(const std::string& dir);

}  // namespace tio
