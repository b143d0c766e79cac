#include "tio/initializer.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace tio {

Vec3 estimateGyroBias(const std::vector<ImuSample>& samples, int min_samples) {
  if (static_cast<int>(samples.size()) < std::max(min_samples, 2))
    throw InsufficientSamples("gyro bias estimation needs at least " +
                              std::to_string(min_samples) + " samples, got " +
                              std::to_string(samples.size()));
  Vec3 sum = Vec3::Zero();
  for (const auto& s : samples) sum += s.gyro;
  return sum / static_cast<double>(samples.size());
}

Vec3 rollPitchBiasError(const Vec3& a, const Vec3& ba, double roll, double pitch,
                        double g, Eigen::Matrix<double, 3, 5>* jacobian) {
  const double sr = std::sin(roll), cr = std::cos(roll);
  const double sp = std::sin(pitch), cp = std::cos(pitch);
  // R_pitch(theta) R_roll(phi) [0 0 g]^T
  const Vec3 rg(sp * cr * g, -sr * g, cp * cr * g);
  const Vec3 e = a - ba + rg;
  if (jacobian != nullptr) {
    jacobian->setZero();
    jacobian->block<3, 3>(0, 0) = -Mat3::Identity();
    (*jacobian)(0, 3) = -sp * sr * g;
    (*jacobian)(1, 3) = -cr * g;
    (*jacobian)(2, 3) = -cp * sr * g;
    (*jacobian)(0, 4) = cp * cr * g;
    (*jacobian)(1, 4) = 0.0;
    (*jacobian)(2, 4) = -sp * cr * g;
  }
  return e;
}

namespace {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

double objective(const Vec3& a, const Vec5& x, double w, double g) {
  const Vec3 e = rollPitchBiasError(a, x.head<3>(), x(3), x(4), g);
  return e.squaredNorm() + w * x.head<3>().squaredNorm();
}

}  // namespace

InitResult solveRollPitchBias(const Vec3& accel_mean, double bias_weight, double gravity,
                              int max_iterations, double grad_tol) {
  const double norm = accel_mean.norm();
  if (norm < 0.5 * gravity || norm > 1.5 * gravity)
    throw std::invalid_argument("solveRollPitchBias: |a_mean| far from g, not stationary");
  if (bias_weight <= 0.0) throw std::invalid_argument("solveRollPitchBias: w must be > 0");

  Vec5 x = Vec5::Zero();
  // Closed-form accelerometer tilt as the starting point.
  x(3) = std::atan2(accel_mean.y(), -accel_mean.z());
  x(4) = std::atan2(-accel_mean.x(), std::hypot(accel_mean.y(), accel_mean.z()));

  double radius = 1.0;
  double cost = objective(accel_mean, x, bias_weight, gravity);
  bool converged = false;

  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Matrix<double, 3, 5> jac;
    const Vec3 e = rollPitchBiasError(accel_mean, x.head<3>(), x(3), x(4), gravity, &jac);
    Vec5 grad = 2.0 * jac.transpose() * e;
    grad.head<3>() += 2.0 * bias_weight * x.head<3>();
    if (grad.norm() < grad_tol) {
      converged = true;
      break;
    }
    Mat5 hess = 2.0 * jac.transpose() * jac;
    hess.topLeftCorner<3, 3>() += 2.0 * bias_weight * Mat3::Identity();

    // Newton step, pulled back to the trust region boundary if needed.
    Vec5 step = hess.ldlt().solve(-grad);
    if (step.norm() > radius) step *= radius / step.norm();

    const double predicted = -(grad.dot(step) + 0.5 * step.dot(hess * step));
    const double new_cost = objective(accel_mean, x + step, bias_weight, gravity);
    const double actual = cost - new_cost;
    const double rho = predicted > 0.0 ? actual / predicted : -1.0;
    if (rho > 1e-3) {
      x += step;
      cost = new_cost;
      if (rho > 0.75) radius *= 2.0;
    } else {
      radius *= 0.25;
      if (radius < 1e-14) break;
    }
  }

  // Final gradient check for the converged flag.
  {
    Eigen::Matrix<double, 3, 5> jac;
    const Vec3 e = rollPitchBiasError(accel_mean, x.head<3>(), x(3), x(4), gravity, &jac);
    Vec5 grad = 2.0 * jac.transpose() * e;
    grad.head<3>() += 2.0 * bias_weight * x.head<3>();
    converged = grad.norm() < 1e-8;
  }
  if (!converged) throw NoConvergence("solveRollPitchBias: gradient tolerance not reached");

  InitResult r;
  r.accel_bias = x.head<3>();
  r.roll = x(3);
  r.pitch = x(4);
  r.converged = converged;
  r.final_cost = cost;
  return r;
}

double initYaw(const std::vector<Rotation3>& attitude_samples) {
  if (attitude_samples.empty())
    throw InsufficientSamples("initYaw: need at least one attitude sample");
  Mat3 sum = Mat3::Zero();
  for (const auto& r : attitude_samples) sum += r.matrix();
  Eigen::JacobiSVD<Mat3> svd(sum, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 mean = svd.matrixU() * svd.matrixV().transpose();
  if (mean.determinant() < 0.0) {
    Mat3 d = Mat3::Identity();
    d(2, 2) = -1.0;
    mean = svd.matrixU() * d * svd.matrixV().transpose();
  }
  return Rotation3(mean).yaw();
}

InitResult initializeStationary(const std::vector<ImuSample>& imu,
                                const std::vector<Rotation3>& attitude, double bias_weight,
                                double gravity, int min_imu_samples) {
  InitResult r;
  r.gyro_bias = estimateGyroBias(imu, min_imu_samples);
  Vec3 a_mean = Vec3::Zero();
  for (const auto& s : imu) a_mean += s.accel;
  a_mean /= static_cast<double>(imu.size());
  InitResult rp = solveRollPitchBias(a_mean, bias_weight, gravity);
  r.accel_bias = rp.accel_bias;
  r.roll = rp.roll;
  r.pitch = rp.pitch;
  r.converged = rp.converged;
  r.final_cost = rp.final_cost;
  r.yaw = initYaw(attitude);
  return r;
}

}  // namespace tio
