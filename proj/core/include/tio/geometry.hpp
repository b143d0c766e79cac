#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace tio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

Mat3 skew(const Vec3& v);

/// Rotation on SO(3), stored as a unit quaternion with w >= 0 so that
/// serialized values compare deterministically.
class Rotation3 {
 public:
  Rotation3() : q_(1.0, 0.0, 0.0, 0.0) {}
  explicit Rotation3(const Eigen::Quaterniond& q) : q_(q.normalized()) { canonicalize(); }
  explicit Rotation3(const Mat3& m) : q_(m) { canonicalize(); }

  static Rotation3 identity() { return Rotation3(); }

  // Exponential map; small angles fall back to a series expansion.
  static Rotation3 exp(const Vec3& omega);

  // Minimal axis-angle vector, |log()| <= pi.
  Vec3 log() const;

  Rotation3 operator*(const Rotation3& rhs) const {
    return Rotation3(q_ * rhs.q_);
  }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

  Rotation3 inverse() const { return Rotation3(q_.conjugate()); }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

  // Yaw of the Z-Y-X Euler decomposition.
  double yaw() const;
  double roll() const;
  double pitch() const;

  static Rotation3 fromYpr(double yaw, double pitch, double roll);

  bool isApprox(const Rotation3& other, double tol = 1e-9) const {
    return matrix().isApprox(other.matrix(), tol);
  }

 private:
  void canonicalize() {
    q_.normalize();
    if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
  }
  Eigen::Quaterniond q_;
};

inline Rotation3 so3Exp(const Vec3& omega) { return Rotation3::exp(omega); }
inline Vec3 so3Log(const Rotation3& r) { return r.log(); }

// Right Jacobian of the SO(3) exponential and its inverse.
Mat3 so3RightJacobian(const Vec3& omega);
Mat3 so3RightJacobianInverse(const Vec3& omega);

/// Rigid transform; composition follows the usual T_ab * T_bc = T_ac chain.
class Pose3 {
 public:
  Pose3() : t_(Vec3::Zero()) {}
  Pose3(const Rotation3& r, const Vec3& t) : r_(r), t_(t) {}

  static Pose3 identity() { return Pose3(); }

  Pose3 operator*(const Pose3& rhs) const {
    return Pose3(r_ * rhs.r_, t_ + r_ * rhs.t_);
  }
  Vec3 operator*(const Vec3& p) const { return r_ * p + t_; }

  Pose3 inverse() const {
    Rotation3 rinv = r_.inverse();
    return Pose3(rinv, -(rinv * t_));
  }

  const Rotation3& rotation() const { return r_; }
  const Vec3& translation() const { return t_; }
  Rotation3& rotation() { return r_; }
  Vec3& translation() { return t_; }

  Eigen::Matrix4d matrix() const;

  bool isApprox(const Pose3& other, double tol = 1e-9) const {
    return r_.isApprox(other.r_, tol) && t_.isApprox(other.t_, tol);
  }

 private:
  Rotation3 r_;
  Vec3 t_;
};

}  // namespace tio
