#include "tio/preintegration.hpp"

#include <Eigen/Eigenvalues>

namespace tio {

PreintegratedImu::PreintegratedImu(const ImuBias& bias, const ImuNoiseParams& noise)
    : bias_(bias), noise_(noise) {}

void PreintegratedImu::add(const ImuSample& sample, double dt, const ImuBias& bias) {
  if (dt <= 0.0) throw std::invalid_argument("preintegration: dt must be > 0");
  if (!bias.isApprox(bias_))
    throw BiasMismatch("preintegration: sample bias differs from linearization point");

  const Vec3 w = sample.gyro - bias_.gyro;
  const Vec3 a = sample.accel - bias_.accel;
  const Mat3 dRk = delta_rot_.matrix();
  const Rotation3 incr = Rotation3::exp(w * dt);
  const Mat3 jr = so3RightJacobian(w * dt);

  // Covariance propagation, error state (d_theta, d_v, d_p), right
  // perturbation on the rotation delta.
  Mat9 A = Mat9::Identity();
  A.block<3, 3>(0, 0) = incr.matrix().transpose();
  A.block<3, 3>(3, 0) = -dRk * skew(a) * dt;
  A.block<3, 3>(6, 0) = -0.5 * dRk * skew(a) * dt * dt;
  A.block<3, 3>(6, 3) = Mat3::Identity() * dt;

  const double var_g = noise_.sigma_g * noise_.sigma_g / dt;
  const double var_a = noise_.sigma_a * noise_.sigma_a / dt;
  Mat9 add = Mat9::Zero();
  add.block<3, 3>(0, 0) = jr * jr.transpose() * (var_g * dt * dt);
  add.block<3, 3>(3, 3) = dRk * dRk.transpose() * (var_a * dt * dt);
  add.block<3, 3>(6, 6) = dRk * dRk.transpose() * (0.25 * var_a * dt * dt * dt * dt);
  add.block<3, 3>(3, 6) = dRk * dRk.transpose() * (0.5 * var_a * dt * dt * dt);
  add.block<3, 3>(6, 3) = add.block<3, 3>(3, 6).transpose();
  cov_ = A * cov_ * A.transpose() + add;

  // Bias Jacobians before state update (they use dR_k).
  const Mat3 jR = j_bias_.block<3, 3>(0, 0);
  Eigen::Matrix<double, 9, 6> jn = j_bias_;
  jn.block<3, 3>(0, 0) = incr.matrix().transpose() * jR - jr * dt;
  jn.block<3, 3>(3, 0) += -dRk * skew(a) * jR * dt;
  jn.block<3, 3>(3, 3) += -dRk * dt;
  jn.block<3, 3>(6, 0) += j_bias_.block<3, 3>(3, 0) * dt - 0.5 * dRk * skew(a) * jR * dt * dt;
  jn.block<3, 3>(6, 3) += j_bias_.block<3, 3>(3, 3) * dt - 0.5 * dRk * dt * dt;
  j_bias_ = jn;

  delta_pos_ += delta_vel_ * dt + 0.5 * dRk * a * dt * dt;
  delta_vel_ += dRk * a * dt;
  delta_rot_ = delta_rot_ * incr;
  delta_t_ += dt;
  ++count_;
}

Rotation3 PreintegratedImu::deltaRotCorrected(const ImuBias& b) const {
  const Vec3 dbg = b.gyro - bias_.gyro;
  return delta_rot_ * Rotation3::exp(j_bias_.block<3, 3>(0, 0) * dbg);
}

Vec3 PreintegratedImu::deltaVelCorrected(const ImuBias& b) const {
  const Vec3 dbg = b.gyro - bias_.gyro;
  const Vec3 dba = b.accel - bias_.accel;
  return delta_vel_ + j_bias_.block<3, 3>(3, 0) * dbg + j_bias_.block<3, 3>(3, 3) * dba;
}

Vec3 PreintegratedImu::deltaPosCorrected(const ImuBias& b) const {
  const Vec3 dbg = b.gyro - bias_.gyro;
  const Vec3 dba = b.accel - bias_.accel;
  return delta_pos_ + j_bias_.block<3, 3>(6, 0) * dbg + j_bias_.block<3, 3>(6, 3) * dba;
}

Vec9 PreintegratedImu::residual(const Rotation3& Ri, const Vec3& pi, const Vec3& vi,
                                const Rotation3& Rj, const Vec3& pj, const Vec3& vj,
                                const ImuBias& bias, const Vec3& gravity_world,
                                Eigen::Matrix<double, 9, 9>* J_i,
                                Eigen::Matrix<double, 9, 9>* J_j,
                                Eigen::Matrix<double, 9, 6>* J_bias) const {
  const Vec3 dbg = bias.gyro - bias_.gyro;
  const Rotation3 dR_corr = deltaRotCorrected(bias);
  const Vec3 dv_corr = deltaVelCorrected(bias);
  const Vec3 dp_corr = deltaPosCorrected(bias);

  const Mat3 Rit = Ri.matrix().transpose();
  const Vec3 dv_states = vj - vi - gravity_world * delta_t_;
  const Vec3 dp_states = pj - pi - vi * delta_t_ - 0.5 * gravity_world * delta_t_ * delta_t_;

  const Rotation3 M = dR_corr.inverse() * Ri.inverse() * Rj;
  Vec9 r;
  r.segment<3>(0) = M.log();
  r.segment<3>(3) = Rit * dv_states + dv_corr;
  r.segment<3>(6) = Rit * dp_states + dp_corr;

  if (J_i != nullptr || J_j != nullptr || J_bias != nullptr) {
    const Mat3 jr_inv = so3RightJacobianInverse(r.segment<3>(0));
    const Mat3 RjtRi = (Rj.inverse() * Ri).matrix();
    if (J_i != nullptr) {
      J_i->setZero();
      J_i->block<3, 3>(0, 0) = -jr_inv * RjtRi;
      J_i->block<3, 3>(3, 0) = skew(Rit * dv_states);
      J_i->block<3, 3>(3, 3) = -Rit;
      J_i->block<3, 3>(6, 0) = skew(Rit * dp_states);
      J_i->block<3, 3>(6, 3) = -Rit * delta_t_;
      J_i->block<3, 3>(6, 6) = -Rit;
    }
    if (J_j != nullptr) {
      J_j->setZero();
      J_j->block<3, 3>(0, 0) = jr_inv;
      J_j->block<3, 3>(3, 3) = Rit;
      J_j->block<3, 3>(6, 6) = Rit;
    }
    if (J_bias != nullptr) {
      J_bias->setZero();
      // d r_R / d bg: see the left-Jacobian expansion of
      // Log(Exp(-J dbg) * dR~^T Ri^T Rj).
      const Mat3 jRbg = j_bias_.block<3, 3>(0, 0);
      const Mat3 N = (delta_rot_.inverse() * Ri.inverse() * Rj).matrix();
      J_bias->block<3, 3>(0, 0) = -jr_inv * N.transpose() * so3RightJacobian(-jRbg * dbg) * jRbg;
      J_bias->block<3, 3>(3, 0) = j_bias_.block<3, 3>(3, 0);
      J_bias->block<3, 3>(3, 3) = j_bias_.block<3, 3>(3, 3);
      J_bias->block<3, 3>(6, 0) = j_bias_.block<3, 3>(6, 0);
      J_bias->block<3, 3>(6, 3) = j_bias_.block<3, 3>(6, 3);
    }
  }
  return r;
}

Mat9 PreintegratedImu::sqrtInformation() const {
  Mat9 c = cov_;
  c.diagonal().array() += 1e-12;
  Eigen::SelfAdjointEigenSolver<Mat9> es(c);
  Vec9 inv_sqrt = es.eigenvalues().cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace tio
