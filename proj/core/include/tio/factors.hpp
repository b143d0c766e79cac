#pragma once

#include <cstdint>
#include <optional>

#include "tio/geometry.hpp"
#include "tio/preintegration.hpp"

namespace tio {

/// Full navigation state attached to one frame. Keyframes carry IMU
/// biases; intermediate frames share their parent keyframe's bias.
struct NavState {
  Pose3 pose;               // world from body
  Vec3 velocity = Vec3::Zero();  // world frame
  std::optional<ImuBias> bias;   // keyframes only
  double t = 0.0;
  bool is_keyframe = false;
  int64_t parent_keyframe = -1;

  // x ⊞ [δθ, δp, δv]: rotation right-multiplicative, translation and
  // velocity additive in world. This ordering is used by every factor
  // Jacobian and by the solver's 9-dof state blocks.
  void retract(const Eigen::Matrix<double, 9, 1>& d) {
    pose.rotation() = pose.rotation() * Rotation3::exp(d.head<3>());
    pose.translation() += d.segment<3>(3);
    velocity += d.tail<3>();
  }
};

/// Inverse-depth feature anchored at a root keyframe's camera. `root_shift`
/// accumulates body-frame relative transforms as the root is handed from a
/// marginalized keyframe to its successor, so (s, rho) keep their original
/// meaning: the original root camera sits at pose(root) * root_shift * T_bc.
struct FeatureState {
  int64_t id = -1;
  Vec3 s = Vec3::UnitZ();   // unit bearing, original root camera frame
  double rho = 1.0 / 15.0;  // inverse depth, 1/m
  int64_t root_keyframe = -1;
  Pose3 root_shift;         // identity until the first root hand-off
};

/// Update root_shift when the root moves from `old_root` to `new_root`
/// (current pose estimates); residuals are unchanged at that estimate.
void shiftRoot(FeatureState& f, const Pose3& old_root_pose, const Pose3& new_root_pose,
               int64_t new_root_id);

/// Orthonormal 3x2 basis of the plane orthogonal to unit vector s; used to
/// express the rank-2 projection residual in a 2D chart.
Eigen::Matrix<double, 3, 2> tangentBasis(const Vec3& s);

struct ProjectionJacobians {
  Eigen::Matrix<double, 3, 6> J_root;  // d r / d [δθ_i, δp_i]
  Eigen::Matrix<double, 3, 6> J_obs;   // d r / d [δθ_j, δp_j]
  Vec3 J_rho;
};

/// Residual of one feature observation: predicted direction in the
/// observing camera, scaled by inverse depth, projected onto the plane
/// orthogonal to the measured bearing s_obs. Rank 2 by construction.
Vec3 projectionResidual(const FeatureState& f, const Pose3& root_pose, const Pose3& obs_pose,
                        const Pose3& T_bc, const Vec3& s_obs,
                        ProjectionJacobians* jac = nullptr);

/// r = rho - rho_lrf; Jacobian w.r.t. rho is exactly 1.
inline double depthPriorResidual(const FeatureState& f, double rho_lrf) {
  return f.rho - rho_lrf;
}

struct BaroMeasurement {
  double z_baro = 0.0;   // compensated altitude, m
  double sigma2 = 1.0;   // correction variance from the compensator, m^2
};

/// Scalar altitude residual z_baro - b - p_z where b is the slowly varying
/// world/pressure datum offset. Independent of attitude, hence invariant
/// under yaw by construction.
double baroResidual(const NavState& x, const BaroMeasurement& m, double b,
                    Eigen::Matrix<double, 1, 3>* J_rot = nullptr,
                    Eigen::Matrix<double, 1, 3>* J_pos = nullptr, double* J_b = nullptr);

/// Heading residual v_ref - Rz(yaw)^T e1. Only the yaw component of the
/// state enters; v_ref is the reference north direction expressed in the
/// body frame, projected to the horizontal plane and renormalized upstream.
Vec3 attitudeResidual(const NavState& x, const Vec3& v_ref, Mat3* J_rot = nullptr);

/// Project a body-frame direction onto the horizontal plane of reference
/// rotation `R_ref` and renormalize — produces the v_ref fed to
/// attitudeResidual from an external attitude estimate.
Vec3 projectHeadingReference(const Rotation3& R_ref);

/// r = v; used while the zero-velocity detector is latched.
inline Vec3 zeroVelocityResidual(const NavState& x, Mat3* J_vel = nullptr) {
  if (J_vel != nullptr) *J_vel = Mat3::Identity();
  return x.velocity;
}

/// Gravity-direction attitude residual: a_dir - R^T g_dir with g_dir the
/// unit world gravity direction. Constrains roll/pitch, leaves yaw free.
Vec3 gravityAttitudeResidual(const NavState& x, const Vec3& accel_dir, const Vec3& gravity_world,
                             Mat3* J_rot = nullptr);

/// Huber IRLS weight for a whitened residual norm.
inline double huberWeight(double norm, double delta = 1.345) {
  return norm <= delta ? 1.0 : delta / norm;
}

}  // namespace tio
