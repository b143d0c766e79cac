#pragma once

#include <Eigen/Dense>

namespace tio {

/// Dense Gaussian prior on the keyframe succeeding the marginalized group:
/// cost(delta) = 0.5 (delta - mu)^T H (delta - mu) in the tangent space of
/// the linearization point captured at marginalization time.
struct MarginalPriorInfo {
  Eigen::MatrixXd H;   // symmetric, singular values clipped
  Eigen::VectorXd mu;
  bool h11_fallback = false;  // the nav elimination needed a floored pseudo-inverse
};

struct MarginalizationParams {
  double clip_min = 1e-8;
  double clip_max = 1e8;
  double pinv_floor = 1e-10;  // eigenvalue floor for the SingularH11 fallback
};

/// Eliminate the marginalized blocks of a Hessian/gradient pair ordered
/// [removed nav+bias (n1) | kept successor keyframe (n2) | cloned features
/// (n3)]: first the (block-diagonal) feature block, then the nav block,
/// then symmetrize, clip singular values, and recover the prior mean
/// mu = H22^{-1} r2. Gradient convention: r = -J^T W residual, so that the
/// implied prior mean is the MAP offset in local coordinates.
MarginalPriorInfo marginalizeBlocks(const Eigen::MatrixXd& H, const Eigen::VectorXd& r,
                                    int n1, int n2, int n3,
                                    const MarginalizationParams& p = MarginalizationParams());

/// Symmetrize and clip the singular values of a symmetric matrix into
/// [clip_min, clip_max] (eigenvalue magnitude clip on the symmetric part).
Eigen::MatrixXd clipSingularValues(const Eigen::MatrixXd& H, double clip_min, double clip_max);

}  // namespace tio
