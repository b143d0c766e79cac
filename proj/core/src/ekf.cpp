#include "tio/ekf.hpp"

namespace tio {

HighRateEkf::HighRateEkf(const EkfParams& params) : p_(params) {}

void HighRateEkf::initialize(const NavState& x, const ImuBias& bias, double t) {
  x_ = x;
  bias_ = bias;
  t_ = t;
  P_.setIdentity();
  P_ *= 1e-6;
  initialized_ = true;
}

void HighRateEkf::propagate(const ImuSample& s) {
  if (!initialized_) return;
  const double dt = t_ < 0.0 ? 0.0 : s.t - t_;
  t_ = s.t;
  if (dt <= 0.0) return;

  const Vec3 omega = s.gyro - bias_.gyro;
  // The accelerometer reports the negated specific force, so the world
  // acceleration is g - R (a_meas - b_a).
  const Vec3 a_body = s.accel - bias_.accel;
  const Mat3 R = x_.pose.rotation().matrix();
  const Vec3 a_world = p_.gravity - R * a_body;

  x_.pose.translation() += x_.velocity * dt + 0.5 * a_world * dt * dt;
  x_.velocity += a_world * dt;
  x_.pose.rotation() = x_.pose.rotation() * Rotation3::exp(omega * dt);
  x_.t = s.t;

  // Error-state transition for [δθ, δp, δv] (right-multiplicative rotation).
  Eigen::Matrix<double, 9, 9> F = Eigen::Matrix<double, 9, 9>::Identity();
  F.block<3, 3>(0, 0) = Rotation3::exp(omega * dt).matrix().transpose();
  F.block<3, 3>(3, 6) = Mat3::Identity() * dt;
  F.block<3, 3>(6, 0) = R * skew(a_body) * dt;

  Eigen::Matrix<double, 9, 9> Q = Eigen::Matrix<double, 9, 9>::Zero();
  const double sg2 = p_.imu_noise.sigma_g * p_.imu_noise.sigma_g * dt;
  const double sa2 = p_.imu_noise.sigma_a * p_.imu_noise.sigma_a * dt;
  Q.block<3, 3>(0, 0) = Mat3::Identity() * sg2;
  Q.block<3, 3>(3, 3) = Mat3::Identity() * (0.25 * sa2 * dt * dt);
  Q.block<3, 3>(6, 6) = Mat3::Identity() * sa2;

  P_ = F * P_ * F.transpose() + Q;
  P_ = 0.5 * (P_ + P_.transpose());
}

void HighRateEkf::fuse(const NavState& x, const ImuBias& bias, int64_t epoch) {
  if (!initialized_ || epoch <= last_epoch_) return;
  last_epoch_ = epoch;
  bias_ = bias;

  // Direct state measurement: r = x_opt ⊟ x_ekf, H = I.
  Eigen::Matrix<double, 9, 1> r;
  r.head<3>() = (x_.pose.rotation().inverse() * x.pose.rotation()).log();
  r.segment<3>(3) = x.pose.translation() - x_.pose.translation();
  r.tail<3>() = x.velocity - x_.velocity;

  Eigen::Matrix<double, 9, 1> rdiag;
  rdiag.head<3>().setConstant(p_.fuse_sigma_rot * p_.fuse_sigma_rot);
  rdiag.segment<3>(3).setConstant(p_.fuse_sigma_pos * p_.fuse_sigma_pos);
  rdiag.tail<3>().setConstant(p_.fuse_sigma_vel * p_.fuse_sigma_vel);
  const Eigen::Matrix<double, 9, 9> Rm = rdiag.asDiagonal();

  const Eigen::Matrix<double, 9, 9> S = P_ + Rm;
  const Eigen::Matrix<double, 9, 9> K = P_ * S.ldlt().solve(Eigen::Matrix<double, 9, 9>::Identity());
  const Eigen::Matrix<double, 9, 1> dx = K * r;

  x_.retract(dx);

  // Joseph form keeps the covariance SPD.
  const Eigen::Matrix<double, 9, 9> IK = Eigen::Matrix<double, 9, 9>::Identity() - K;
  P_ = IK * P_ * IK.transpose() + K * Rm * K.transpose();
  P_ = 0.5 * (P_ + P_.transpose());
}

}  // namespace tio
