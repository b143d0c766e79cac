#include "tio/geometry.hpp"

#include <cmath>

namespace tio {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Rotation3 Rotation3::exp(const Vec3& omega) {
  const double angle = omega.norm();
  double half = 0.5 * angle;
  double sinc_half;  // sin(angle/2) / angle
  if (angle < 1e-6) {
    sinc_half = 0.5 - angle * angle / 48.0;
  } else {
    sinc_half = std::sin(half) / angle;
  }
  Eigen::Quaterniond q(std::cos(half), sinc_half * omega.x(),
                       sinc_half * omega.y(), sinc_half * omega.z());
  return Rotation3(q);
}

Vec3 Rotation3::log() const {
  // w >= 0 is guaranteed by canonicalization, so the angle is in [0, pi].
  const double w = q_.w();
  const Vec3 v(q_.x(), q_.y(), q_.z());
  const double vnorm = v.norm();
  if (vnorm < 1e-12) {
    return 2.0 * v;  // angle ~ 0
  }
  const double angle = 2.0 * std::atan2(vnorm, w);
  return (angle / vnorm) * v;
}

double Rotation3::yaw() const {
  const Mat3 m = matrix();
  return std::atan2(m(1, 0), m(0, 0));
}

double Rotation3::pitch() const {
  const Mat3 m = matrix();
  return std::asin(std::clamp(-m(2, 0), -1.0, 1.0));
}

double Rotation3::roll() const {
  const Mat3 m = matrix();
  return std::atan2(m(2, 1), m(2, 2));
}

Rotation3 Rotation3::fromYpr(double yaw, double pitch, double roll) {
  Eigen::Quaterniond q = Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
                         Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                         Eigen::AngleAxisd(roll, Vec3::UnitX());
  return Rotation3(q);
}

Mat3 so3RightJacobian(const Vec3& omega) {
  const double angle = omega.norm();
  const Mat3 w = skew(omega);
  if (angle < 1e-6) {
    return Mat3::Identity() - 0.5 * w + (1.0 / 6.0) * w * w;
  }
  const double a2 = angle * angle;
  return Mat3::Identity() - (1.0 - std::cos(angle)) / a2 * w +
         (angle - std::sin(angle)) / (a2 * angle) * w * w;
}

Mat3 so3RightJacobianInverse(const Vec3& omega) {
  const double angle = omega.norm();
  const Mat3 w = skew(omega);
  if (angle < 1e-6) {
    return Mat3::Identity() + 0.5 * w + (1.0 / 12.0) * w * w;
  }
  const double a2 = angle * angle;
  const double c = 1.0 / a2 - (1.0 + std::cos(angle)) / (2.0 * angle * std::sin(angle));
  return Mat3::Identity() + 0.5 * w + c * w * w;
}

Eigen::Matrix4d Pose3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r_.matrix();
  m.topRightCorner<3, 1>() = t_;
  return m;
}

}  // namespace tio
