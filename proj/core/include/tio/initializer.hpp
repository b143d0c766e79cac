#pragma once

#include <stdexcept>
#include <vector>

#include "tio/geometry.hpp"
#include "tio/preintegration.hpp"
#include "tio/signal.hpp"

namespace tio {

struct InsufficientSamples : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InitResult {
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  bool converged = false;
  double final_cost = 0.0;
};

/// Component-wise mean of stationary gyro readings.
Vec3 estimateGyroBias(const std::vector<ImuSample>& samples, int min_samples = 500);

/// Jointly estimates accelerometer bias, roll and pitch from the mean
/// stationary accelerometer reading by minimizing
///   J(x) = |a - b_a + R_pitch R_roll g|^2 + w |b_a|^2
/// with a trust-region Newton iteration (Gauss-Newton Hessian plus the
/// exact second derivative of the regularizer).
InitResult solveRollPitchBias(const Vec3& accel_mean, double bias_weight, double gravity,
                              int max_iterations = 50, double grad_tol = 1e-10);

/// Error model and its 3x5 Jacobian, exposed for verification.
Vec3 rollPitchBiasError(const Vec3& accel_mean, const Vec3& bias, double roll, double pitch,
                        double gravity, Eigen::Matrix<double, 3, 5>* jacobian = nullptr);

/// Yaw of the chordal-mean rotation of the attitude reference samples.
double initYaw(const std::vector<Rotation3>& attitude_samples);

/// Full initialization from a stationary capture.
InitResult initializeStationary(const std::vector<ImuSample>& imu,
                                const std::vector<Rotation3>& attitude, double bias_weight,
                                double gravity, int min_imu_samples = 500);

}  // namespace tio
