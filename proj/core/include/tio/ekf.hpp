#pragma once

#include "tio/factors.hpp"
#include "tio/preintegration.hpp"

namespace tio {

struct EkfParams {
  ImuNoiseParams imu_noise;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  // Optimizer epochs are fused as a direct state measurement with this
  // fixed diagonal covariance (the smoother covariance is not extracted).
  double fuse_sigma_pos = 0.05;                  // m
  double fuse_sigma_vel = 0.05;                  // m/s
  double fuse_sigma_rot = 0.5 * M_PI / 180.0;    // rad
};

/// Lightweight strapdown filter giving low-latency pose between smoother
/// epochs: propagated at IMU rate, corrected whenever the optimizer
/// publishes a new window solution. Error state is [δθ, δp, δv].
class HighRateEkf {
 public:
  explicit HighRateEkf(const EkfParams& params = EkfParams());

  void initialize(const NavState& x, const ImuBias& bias, double t);

  /// Strapdown propagation with one conditioned IMU sample.
  void propagate(const ImuSample& s);

  /// Absorb an optimizer epoch (pose + velocity + bias copy).
  void fuse(const NavState& x, const ImuBias& bias, int64_t epoch);

  bool initialized() const { return initialized_; }
  const NavState& state() const { return x_; }
  const ImuBias& bias() const { return bias_; }
  const Eigen::Matrix<double, 9, 9>& covariance() const { return P_; }
  int64_t lastFusedEpoch() const { return last_epoch_; }
  double time() const { return t_; }

 private:
  EkfParams p_;
  bool initialized_ = false;
  NavState x_;
  ImuBias bias_;
  Eigen::Matrix<double, 9, 9> P_ = Eigen::Matrix<double, 9, 9>::Identity();
  double t_ = -1.0;
  int64_t last_epoch_ = -1;
};

}  // namespace tio
