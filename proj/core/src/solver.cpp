#include "tio/solver.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <cmath>

namespace tio {

Eigen::MatrixXd SchurSystem::reduced() const {
  if (E.cols() == 0) return B;
  return B - E * C.cwiseInverse().asDiagonal() * E.transpose();
}

Eigen::VectorXd SchurSystem::reducedRhs() const {
  if (E.cols() == 0) return d_B;
  return d_B - E * d_C.cwiseQuotient(C);
}

Eigen::VectorXd SchurSystem::backSubstitute(const Eigen::VectorXd& dx_B) const {
  if (E.cols() == 0) return Eigen::VectorXd();
  return (d_C - E.transpose() * dx_B).cwiseQuotient(C);
}

namespace {

Eigen::SparseMatrix<double> sparsify(const Eigen::MatrixXd& m) {
  Eigen::SparseMatrix<double> s = m.sparseView(0.0, 0.0);  // drop exact zeros only
  s.makeCompressed();
  return s;
}

/// Inverted diagonal blocks of S, applied as the preconditioner.
struct BlockJacobi {
  std::vector<Eigen::MatrixXd> inv;
  std::vector<int> offsets, sizes;

  BlockJacobi(const SchurSystem& sys) {
    const Eigen::VectorXd cinv =
        sys.C.size() > 0 ? sys.C.cwiseInverse().eval() : Eigen::VectorXd();
    int off = 0;
    std::vector<int> bs = sys.block_sizes;
    if (bs.empty()) bs.assign(size_t(sys.B.rows()), 1);  // scalar fallback
    for (int n : bs) {
      offsets.push_back(off);
      sizes.push_back(n);
      Eigen::MatrixXd blk = sys.B.block(off, off, n, n);
      if (sys.E.cols() > 0) {
        const auto er = sys.E.middleRows(off, n);
        blk.noalias() -= er * cinv.asDiagonal() * er.transpose();
      }
      // Guard indefinite diagonal blocks with a small ridge.
      Eigen::LDLT<Eigen::MatrixXd> ldlt(blk);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        ldlt.compute(blk + 1e-8 * blk.norm() * Eigen::MatrixXd::Identity(n, n));
      inv.push_back(ldlt.solve(Eigen::MatrixXd::Identity(n, n)));
      off += n;
    }
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& r) const {
    Eigen::VectorXd z(r.size());
    for (size_t k = 0; k < inv.size(); ++k)
      z.segment(offsets[k], sizes[k]) = inv[k] * r.segment(offsets[k], sizes[k]);
    return z;
  }
};

}  // namespace

Eigen::VectorXd solveSchurPcg(const SchurSystem& sys, const PcgParams& p,
                              SchurSolveReport* report) {
  const Eigen::VectorXd v = sys.reducedRhs();
  const double v_norm = v.norm();
  if (report != nullptr) *report = SchurSolveReport{};
  if (v_norm == 0.0) return Eigen::VectorXd::Zero(v.size());

  const Eigen::SparseMatrix<double> bs = sparsify(sys.B);
  const Eigen::SparseMatrix<double> es = sparsify(sys.E);
  const Eigen::VectorXd cinv =
      sys.C.size() > 0 ? sys.C.cwiseInverse().eval() : Eigen::VectorXd();
  const auto apply_s = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::VectorXd y = bs * x;
    if (es.cols() > 0) y.noalias() -= es * (cinv.cwiseProduct(es.transpose() * x));
    return y;
  };

  BlockJacobi precond(sys);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(v.size());
  Eigen::VectorXd r = v;
  Eigen::VectorXd z = precond.apply(r);
  Eigen::VectorXd pdir = z;
  double rz = r.dot(z);
  double rel = 1.0;
  int used = 0;

  for (int it = 0; it < p.max_iterations; ++it) {
    const Eigen::VectorXd sp = apply_s(pdir);
    const double psp = pdir.dot(sp);
    if (!std::isfinite(psp) || psp <= 0.0)
      throw NumericalFailure("solveSchurPcg: reduced system not positive along search direction");
    const double alpha = rz / psp;
    x += alpha * pdir;
    r -= alpha * sp;
    ++used;
    rel = r.norm() / v_norm;
    if (!std::isfinite(rel) || rel > p.divergence_factor)
      throw NumericalFailure("solveSchurPcg: residual diverged");
    if (rel < p.tolerance) break;
    z = precond.apply(r);
    const double rz_new = r.dot(z);
    pdir = z + (rz_new / rz) * pdir;
    rz = rz_new;
  }

  if (report != nullptr) {
    report->pcg_iterations = used;
    report->rel_residual = rel;
  }

  if (rel > p.fallback_residual) {
    // The capped iteration stalled; factorize the reduced system exactly.
    Eigen::SparseMatrix<double> s = bs;
    if (es.cols() > 0) {
      const Eigen::SparseMatrix<double> esc = es * cinv.asDiagonal();
      s = bs - Eigen::SparseMatrix<double>(esc * es.transpose());
    }
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(s);
    if (ldlt.info() != Eigen::Success)
      throw NumericalFailure("solveSchurPcg: direct fallback factorization failed");
    x = ldlt.solve(v);
    if (report != nullptr) report->direct_fallback = true;
  }
  return x;
}

Eigen::VectorXd solveDense(const SchurSystem& sys) {
  const long nb = sys.B.rows(), nc = sys.C.size();
  Eigen::MatrixXd h(nb + nc, nb + nc);
  h.topLeftCorner(nb, nb) = sys.B;
  h.topRightCorner(nb, nc) = sys.E;
  h.bottomLeftCorner(nc, nb) = sys.E.transpose();
  h.bottomRightCorner(nc, nc) = Eigen::MatrixXd(sys.C.asDiagonal());
  Eigen::VectorXd d(nb + nc);
  d.head(nb) = sys.d_B;
  d.tail(nc) = sys.d_C;
  return h.ldlt().solve(d).head(nb);
}

}  // namespace tio
