#pragma once

#include <stdexcept>

#include "tio/geometry.hpp"
#include "tio/signal.hpp"

namespace tio {

using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

struct ImuBias {
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2

  bool isApprox(const ImuBias& o, double tol = 1e-12) const {
    return gyro.isApprox(o.gyro, tol) && accel.isApprox(o.accel, tol);
  }
};

struct ImuNoiseParams {
  double sigma_g = 1.7e-4;        // gyro white noise, rad/s/sqrt(Hz)
  double sigma_a = 2.0e-3;        // accel white noise, m/s^2/sqrt(Hz)
  double sigma_bg_walk = 1.0e-5;  // gyro bias random walk
  double sigma_ba_walk = 1.0e-4;  // accel bias random walk
};

struct BiasMismatch : std::logic_error {
  using std::logic_error::logic_error;
};

/// Accumulated relative motion between two frames, linearized at a fixed
/// bias. Residual ordering is (rotation, velocity, position).
///
/// Sensor convention (fixed by the initializer's gravity equation): the
/// accelerometer reports the negated specific force, so a level stationary
/// unit reads (0, 0, -g) and world acceleration is
///   a_w = g_w - R (a_meas - b_a),   g_w = (0, 0, -g).
class PreintegratedImu {
 public:
  explicit PreintegratedImu(const ImuBias& bias = ImuBias(),
                            const ImuNoiseParams& noise = ImuNoiseParams());

  void add(const ImuSample& sample, double dt, const ImuBias& bias);

  // Bias-corrected deltas at bias `b` (first order around the
  // linearization point).
  Rotation3 deltaRotCorrected(const ImuBias& b) const;
  Vec3 deltaVelCorrected(const ImuBias& b) const;
  Vec3 deltaPosCorrected(const ImuBias& b) const;

  /// Residual between bracketing states.
  /// States enter as (rotation R world<-body, position p, velocity v).
  /// Optional Jacobian outputs use local coordinates:
  ///   state blocks (d_theta, d_v, d_p) 9-dim, bias block (d_bg, d_ba) 6-dim.
  Vec9 residual(const Rotation3& Ri, const Vec3& pi, const Vec3& vi,
                const Rotation3& Rj, const Vec3& pj, const Vec3& vj,
                const ImuBias& bias, const Vec3& gravity_world,
                Eigen::Matrix<double, 9, 9>* J_i = nullptr,
                Eigen::Matrix<double, 9, 9>* J_j = nullptr,
                Eigen::Matrix<double, 9, 6>* J_bias = nullptr) const;

  const Rotation3& deltaRot() const { return delta_rot_; }
  const Vec3& deltaVel() const { return delta_vel_; }
  const Vec3& deltaPos() const { return delta_pos_; }
  double deltaT() const { return delta_t_; }
  const ImuBias& linearizationBias() const { return bias_; }
  const Mat9& covariance() const { return cov_; }
  const Eigen::Matrix<double, 9, 6>& biasJacobian() const { return j_bias_; }
  int sampleCount() const { return count_; }

  // Square-root information of the accumulated covariance (with a small
  // floor so an empty preintegration stays usable in tests).
  Mat9 sqrtInformation() const;

 private:
  Rotation3 delta_rot_;
  Vec3 delta_vel_ = Vec3::Zero();
  Vec3 delta_pos_ = Vec3::Zero();
  double delta_t_ = 0.0;
  ImuBias bias_;
  ImuNoiseParams noise_;
  // Rows (dR, dv, dp), columns (bg, ba).
  Eigen::Matrix<double, 9, 6> j_bias_ = Eigen::Matrix<double, 9, 6>::Zero();
  Mat9 cov_ = Mat9::Zero();
  int count_ = 0;
};

}  // namespace tio
