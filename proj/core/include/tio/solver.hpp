#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace tio {

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Damped normal equations partitioned into navigation (B) and feature (C)
/// blocks. C is diagonal because features are scalar inverse depths; the
/// damping lambda has already been folded into B and C diagonals.
struct SchurSystem {
  Eigen::MatrixXd B;    // nav x nav, symmetric
  Eigen::MatrixXd E;    // nav x features
  Eigen::VectorXd C;    // diagonal of the feature block, > 0 after damping
  Eigen::VectorXd d_B;  // nav gradient
  Eigen::VectorXd d_C;  // feature gradient
  std::vector<int> block_sizes;  // per-variable nav dims (preconditioner layout)

  Eigen::MatrixXd reduced() const;        // S = B - E C^{-1} E^T
  Eigen::VectorXd reducedRhs() const;     // v = d_B - E C^{-1} d_C
  Eigen::VectorXd backSubstitute(const Eigen::VectorXd& dx_B) const;
};

struct PcgParams {
  int max_iterations = 50;
  double tolerance = 1e-10;        // relative residual
  double divergence_factor = 1e4;  // residual growth triggering failure
  // When the capped PCG leaves a relative residual above this, the reduced
  // system is re-solved with a sparse direct factorization. Full-window
  // VIO Hessians mix preintegration information (~1e10) with bearing
  // information (~1e2); at that conditioning a 50-iteration PCG stalls, so
  // the exact path keeps the step usable while the cap keeps it bounded.
  double fallback_residual = 0.05;
};

struct SchurSolveReport {
  int pcg_iterations = 0;
  double rel_residual = 0.0;  // after PCG, before any fallback
  bool direct_fallback = false;
};

/// Solve S dx_B = v, S = B - E C^-1 E^T, by preconditioned conjugate
/// gradient with a block-Jacobi preconditioner built from `block_sizes`.
/// The operator is applied implicitly through sparse views of B and E, so
/// the reduced matrix is never formed unless the direct fallback runs.
/// Throws NumericalFailure if the residual diverges.
Eigen::VectorXd solveSchurPcg(const SchurSystem& sys, const PcgParams& p = PcgParams(),
                              SchurSolveReport* report = nullptr);

/// Dense reference: solve the full (B E; E^T C) system directly and return
/// the nav part. Used as the correctness oracle for the PCG path.
Eigen::VectorXd solveDense(const SchurSystem& sys);

struct LmParams {
  double lambda_init = 1e-6;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double lambda_min = 1e-9;
  double lambda_max = 1e4;
  int max_iterations = 8;
  int max_retries = 5;  // NumericalFailure -> escalate lambda and retry
  double rel_cost_tol = 1e-2;  // stop once an accepted step barely helps
  PcgParams pcg;
};

}  // namespace tio
