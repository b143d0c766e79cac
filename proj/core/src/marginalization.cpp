#include "tio/marginalization.hpp"

namespace tio {

Eigen::MatrixXd clipSingularValues(const Eigen::MatrixXd& H, double clip_min, double clip_max) {
  const Eigen::MatrixXd sym = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues();
  for (long i = 0; i < ev.size(); ++i) {
    const double mag = std::clamp(std::abs(ev(i)), clip_min, clip_max);
    ev(i) = ev(i) < 0.0 ? -mag : mag;
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

MarginalPriorInfo marginalizeBlocks(const Eigen::MatrixXd& H, const Eigen::VectorXd& r,
                                    int n1, int n2, int n3, const MarginalizationParams& p) {
  const auto H11 = H.block(0, 0, n1, n1);
  const auto H12 = H.block(0, n1, n1, n2);
  const auto H13 = H.block(0, n1 + n2, n1, n3);
  const auto H22 = H.block(n1, n1, n2, n2);
  const auto H23 = H.block(n1, n1 + n2, n2, n3);
  const auto H33 = H.block(n1 + n2, n1 + n2, n3, n3);
  const auto r1 = r.segment(0, n1);
  const auto r2 = r.segment(n1, n2);
  const auto r3 = r.segment(n1 + n2, n3);

  // Feature elimination. The cloned features are scalar blocks, so H33 is
  // diagonal; a dense LDLT keeps this generic for the tests.
  Eigen::MatrixXd t11 = H11, t22 = H22, t12 = H12;
  Eigen::VectorXd tr1 = r1, tr2 = r2;
  if (n3 > 0) {
    Eigen::LDLT<Eigen::MatrixXd> h33(H33);
    const Eigen::MatrixXd h33i_h13t = h33.solve(H13.transpose());
    const Eigen::MatrixXd h33i_h23t = h33.solve(H23.transpose());
    const Eigen::VectorXd h33i_r3 = h33.solve(r3);
    t11 -= H13 * h33i_h13t;
    t22 -= H23 * h33i_h23t;
    t12 -= H13 * h33i_h23t;
    tr1 -= H13 * h33i_r3;
    tr2 -= H23 * h33i_r3;
  }

  MarginalPriorInfo out;
  Eigen::MatrixXd h22_bar = t22;
  Eigen::VectorXd r2_bar = tr2;
  if (n1 > 0) {
    Eigen::MatrixXd t11_sym = 0.5 * (t11 + t11.transpose());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(t11_sym);
    Eigen::MatrixXd t11_inv;
    const bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                    (t11_sym.diagonal().array() > 0.0).all();
    if (ok) {
      t11_inv = ldlt.solve(Eigen::MatrixXd::Identity(n1, n1));
    } else {
      // SingularH11 fallback: eigenvalue-floored pseudo-inverse.
      out.h11_fallback = true;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t11_sym);
      Eigen::VectorXd ev = es.eigenvalues();
      Eigen::VectorXd inv_ev(ev.size());
      const double floor = p.pinv_floor * std::max(1.0, ev.cwiseAbs().maxCoeff());
      for (long i = 0; i < ev.size(); ++i)
        inv_ev(i) = std::abs(ev(i)) < floor ? 0.0 : 1.0 / ev(i);
      t11_inv = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
    }
    h22_bar -= t12.transpose() * t11_inv * t12;
    r2_bar -= t12.transpose() * t11_inv * tr1;
  }

  out.H = clipSingularValues(h22_bar, p.clip_min, p.clip_max);
  out.mu = out.H.ldlt().solve(r2_bar);
  return out;
}

}  // namespace tio
