#include "tio/factors.hpp"

#include <cmath>

namespace tio {

void shiftRoot(FeatureState& f, const Pose3& old_root_pose, const Pose3& new_root_pose,
               int64_t new_root_id) {
  // old_root * shift_old == new_root * shift_new must hold at the current
  // estimate so every chained residual is numerically unchanged.
  f.root_shift = new_root_pose.inverse() * (old_root_pose) * (f.root_shift);
  f.root_keyframe = new_root_id;
}

Eigen::Matrix<double, 3, 2> tangentBasis(const Vec3& s) {
  const Vec3 a = std::abs(s.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  Eigen::Matrix<double, 3, 2> b;
  b.col(0) = s.cross(a).normalized();
  b.col(1) = s.cross(b.col(0)).normalized();
  return b;
}

Vec3 projectionResidual(const FeatureState& f, const Pose3& root_pose, const Pose3& obs_pose,
                        const Pose3& T_bc, const Vec3& s_obs, ProjectionJacobians* jac) {
  const Mat3 R_i = root_pose.rotation().matrix();
  const Mat3 R_j = obs_pose.rotation().matrix();
  const Mat3 R_bc = T_bc.rotation().matrix();
  const Vec3& p_i = root_pose.translation();
  const Vec3& p_j = obs_pose.translation();

  // Original root camera in world: pose(root) * root_shift * T_bc.
  const Mat3 Q = f.root_shift.rotation().matrix() * R_bc;            // body_i -> feat cam
  const Vec3 m = f.root_shift.translation() + f.root_shift.rotation() * T_bc.translation();
  const Mat3 R_wf = R_i * Q;
  const Vec3 p_wf = p_i + R_i * m;

  // Observing camera in world.
  const Mat3 R_wc = R_j * R_bc;
  const Vec3 p_wc = p_j + R_j * T_bc.translation();

  const Mat3 R = R_wc.transpose() * R_wf;          // feat cam -> obs cam
  const Vec3 t = R_wc.transpose() * (p_wf - p_wc);

  const Vec3 z = R * f.s + f.rho * t;
  const Mat3 P = Mat3::Identity() - s_obs * s_obs.transpose();
  const Vec3 r = P * z;

  if (jac != nullptr) {
    const Vec3 qs = Q * f.s;
    jac->J_root.leftCols<3>() = -P * R_wc.transpose() * R_i * skew(qs + f.rho * m);
    jac->J_root.rightCols<3>() = f.rho * P * R_wc.transpose();

    const Vec3 u = R_j.transpose() * R_wf * f.s;     // feat dir in body_j
    const Vec3 w = R_j.transpose() * (p_wf - p_j);
    jac->J_obs.leftCols<3>() = P * R_bc.transpose() * skew(u + f.rho * w);
    jac->J_obs.rightCols<3>() = -f.rho * P * R_wc.transpose();

    jac->J_rho = P * t;
  }
  return r;
}

double baroResidual(const NavState& x, const BaroMeasurement& m, double b,
                    Eigen::Matrix<double, 1, 3>* J_rot, Eigen::Matrix<double, 1, 3>* J_pos,
                    double* J_b) {
  if (J_rot != nullptr) J_rot->setZero();
  if (J_pos != nullptr) *J_pos = Eigen::Matrix<double, 1, 3>(0.0, 0.0, -1.0);
  if (J_b != nullptr) *J_b = -1.0;
  return m.z_baro - b - x.pose.translation().z();
}

Vec3 attitudeResidual(const NavState& x, const Vec3& v_ref, Mat3* J_rot) {
  const Mat3 R = x.pose.rotation().matrix();
  const double a = R(0, 0), c = R(1, 0);
  const double psi = std::atan2(c, a);
  const Vec3 pred(std::cos(psi), -std::sin(psi), 0.0);

  if (J_rot != nullptr) {
    // dpsi/dδθ from the right perturbation of the first column of R.
    const double den = a * a + c * c;
    Eigen::RowVector3d dpsi = Eigen::RowVector3d::Zero();
    if (den > 1e-12) {
      // da = R(0,1) δz − R(0,2) δy ; dc = R(1,1) δz − R(1,2) δy
      dpsi(1) = (-a * R(1, 2) + c * R(0, 2)) / den;
      dpsi(2) = (a * R(1, 1) - c * R(0, 1)) / den;
    }
    const Vec3 dpred_dpsi(-std::sin(psi), -std::cos(psi), 0.0);
    *J_rot = -dpred_dpsi * dpsi;
  }
  return v_ref - pred;
}

Vec3 projectHeadingReference(const Rotation3& R_ref) {
  // North (world x) in the reference body frame, flattened against the
  // body representation of the world horizontal plane via yaw-only model.
  const Mat3 R = R_ref.matrix();
  const double psi = std::atan2(R(1, 0), R(0, 0));
  return {std::cos(psi), -std::sin(psi), 0.0};
}

Vec3 gravityAttitudeResidual(const NavState& x, const Vec3& accel_dir, const Vec3& gravity_world,
                             Mat3* J_rot) {
  const Vec3 g_dir = gravity_world.normalized();
  const Vec3 pred = x.pose.rotation().matrix().transpose() * g_dir;
  if (J_rot != nullptr) *J_rot = -skew(pred);
  return accel_dir - pred;
}

}  // namespace tio
