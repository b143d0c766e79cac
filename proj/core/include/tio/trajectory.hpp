#pragma once

#include <vector>

#include "tio/geometry.hpp"

namespace tio {

enum class TrajectoryKind { Hover, Box, StraightSweep, Slalom };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Box;
  double cruise_speed = 30.0;      // m/s
  double altitude = 50.0;          // m
  double path_length = 3100.0;     // box total arc length, m
  double heading_increment_deg = 15.0;  // straight-sweep step
  double sweep_arc_deg = 180.0;
  double leg_length = 120.0;       // straight-sweep leg, m
  double hover_duration = 20.0;    // hover kind only, s
  double initial_hover = 5.0;      // stationary lead-in for initialization, s
  double ramp_duration = 5.0;      // speed-up time, s
  double turn_duration = 3.0;      // heading transition time, s
  double slalom_period = 6.0;      // s
  double slalom_amplitude_deg = 60.0;
  double slalom_duration = 60.0;   // s
  double slalom_speed = 12.0;      // m/s
};

/// One truth state at IMU rate. World frame: x east, y north, z up.
/// Body frame FLU, x along heading, roll = pitch = 0 by construction.
struct TruthSample {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 accel = Vec3::Zero();       // world-frame acceleration (no gravity)
  double yaw = 0.0;
  double yaw_rate = 0.0;

  Rotation3 rotation() const { return Rotation3::exp(Vec3(0.0, 0.0, yaw)); }
  Pose3 pose() const;
};

/// Sample the analytic trajectory at `rate_hz`. Position is integrated
/// with Gauss-Legendre quadrature from the closed-form velocity, so
/// velocity/acceleration are exact derivatives of the sampled positions.
std::vector<TruthSample> generateTruth(const TrajectorySpec& spec, double rate_hz = 1200.0);

double pathLength(const std::vector<TruthSample>& truth);

}  // namespace tio
