#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "invnets/common.hpp"

namespace invnets::num {

using Cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

/// Phase of z in [0, 2*pi). phase(0) := 0 by convention.
inline double phase(Cplx z) {
  if (z.real() == 0.0 && z.imag() == 0.0) return 0.0;
  double a = std::arg(z);  // (-pi, pi]
  if (a < 0.0) a += 2.0 * M_PI;
  if (a >= 2.0 * M_PI) a = 0.0;  // guard against rounding of tiny negative args
  return a;
}

struct NonHermitianError : ContractError {
  using ContractError::ContractError;
};

struct RankDeficientError : std::runtime_error {
  int rank;
  explicit RankDeficientError(int r, const std::string& what)
      : std::runtime_error(what), rank(r) {}
};

struct HermitianEig {
  RVec eigenvalues;  // sorted descending
  CMat eigenvectors; // columns, unitary
};

inline bool is_hermitian(const CMat& a, double tol = 1e-10) {
  if (a.rows() != a.cols()) return false;
  return (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
/// Contract: ||A - Q diag(lambda) Q*||_F <= 1e-9 ||A||_F.
inline HermitianEig eig_hermitian(const CMat& a, double hermitian_tol = 1e-10) {
  if (a.rows() != a.cols()) throw ContractError("eig_hermitian: matrix must be square");
  if (!is_hermitian(a, hermitian_tol))
    throw NonHermitianError("eig_hermitian: input is not Hermitian within tolerance");
  CMat sym = 0.5 * (a + a.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> solver(sym);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eig_hermitian: eigensolver failed to converge");
  const Eigen::Index n = a.rows();
  HermitianEig out;
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = CMat(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    out.eigenvectors.col(j) = solver.eigenvectors().col(n - 1 - j);
  return out;
}

/// Minimizer X of ||A X - B||_F for full-column-rank A.
inline CMat solve_least_squares(const CMat& a, const CMat& b) {
  if (a.rows() != b.rows())
    throw ContractError("solve_least_squares: row counts of A and B differ");
  Eigen::ColPivHouseholderQR<CMat> qr(a);
  if (qr.rank() < a.cols())
    throw RankDeficientError(static_cast<int>(qr.rank()),
                             "solve_least_squares: A is rank deficient (numerical rank " +
                                 std::to_string(qr.rank()) + " < " + std::to_string(a.cols()) +
                                 " columns)");
  return qr.solve(b);
}

inline RMat solve_least_squares(const RMat& a, const RMat& b) {
  if (a.rows() != b.rows())
    throw ContractError("solve_least_squares: row counts of A and B differ");
  Eigen::ColPivHouseholderQR<RMat> qr(a);
  if (qr.rank() < a.cols())
    throw RankDeficientError(static_cast<int>(qr.rank()),
                             "solve_least_squares: A is rank deficient (numerical rank " +
                                 std::to_string(qr.rank()) + " < " + std::to_string(a.cols()) +
                                 " columns)");
  return qr.solve(b);
}

struct GeneralEig {
  CVec eigenvalues;
  CMat eigenvectors;
};

/// Eigenvalues of a general complex square matrix (subspace-rotation fits).
inline GeneralEig eig_general(const CMat& a) {
  if (a.rows() != a.cols()) throw ContractError("eig_general: matrix must be square");
  Eigen::ComplexEigenSolver<CMat> solver(a);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eig_general: eigensolver failed to converge");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

}  // namespace invnets::num
