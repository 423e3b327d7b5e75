#ifndef H2LU_DENSE_KERNELS_HPP
#define H2LU_DENSE_KERNELS_HPP

#include <algorithm>
#include <cmath>

#include "h2lu/types.hpp"

namespace h2lu {

struct TruncatedSVD {
  Mat U;           // orthonormal columns, one per retained singular value
  RealVec sigma;   // retained spectrum, descending
  Index rank = 0;
  double eps = 0.0;
};

// Spectral decomposition of a (numerically) PSD Hermitian matrix, truncated by
// the relative rule sigma_j <= eps * sigma_0. The absolute floor keeps G = 0
// well defined (rank 0). Negative round-off eigenvalues are clamped to zero.
inline TruncatedSVD truncated_eig_psd(const Mat& G, double eps) {
  if (G.rows() != G.cols()) throw InvalidInputError("truncated_eig_psd: matrix must be square");
  TruncatedSVD out;
  out.eps = eps;
  if (G.rows() == 0) {
    out.U = Mat(0, 0);
    out.sigma = RealVec(0);
    return out;
  }
  Mat H = 0.5 * (G + G.adjoint());
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  if (es.info() != Eigen::Success) throw NonFiniteError("truncated_eig_psd: eigensolver failed");

  const Index n = G.rows();
  RealVec vals(n);
  for (Index i = 0; i < n; ++i) vals[i] = std::max(es.eigenvalues()[n - 1 - i], 0.0);
  double threshold = std::max(eps * vals[0], 1e-300);
  Index r = 0;
  while (r < n && vals[r] > threshold) ++r;

  out.rank = r;
  out.sigma = vals.head(r);
  out.U = Mat(n, r);
  for (Index i = 0; i < r; ++i) out.U.col(i) = es.eigenvectors().col(n - 1 - i);
  return out;
}

// Given V with orthonormal columns, returns V_perp so that [V_perp V] is
// unitary. The completion comes from the trailing columns of a full
// Householder QR of V.
inline Mat unitary_completion(const Mat& V) {
  const Index m = V.rows();
  const Index k = V.cols();
  if (k > m) throw InvalidInputError("unitary_completion: more columns than rows");
  if (k > 0) {
    double ortho = (V.adjoint() * V - Mat::Identity(k, k)).cwiseAbs().maxCoeff();
    if (ortho > 1e-10)
      throw InvalidInputError("unitary_completion: input columns are not orthonormal (defect " + std::to_string(ortho) + ")");
  }
  if (k == 0) return Mat::Identity(m, m);
  if (k == m) return Mat(m, 0);
  Eigen::HouseholderQR<Mat> qr(V);
  Mat Q = qr.householderQ();
  return Q.rightCols(m - k);
}

// Unpivoted LU, F = L * U with unit lower diagonal. Fails loudly on small
// pivots instead of silently producing garbage; the factorization catches the
// error and attaches the cluster/level it was working on.
inline std::pair<Mat, Mat> partial_lu(const Mat& F, double pivot_tol = 1e-13) {
  if (F.rows() != F.cols()) throw InvalidInputError("partial_lu: matrix must be square");
  const Index n = F.rows();
  Mat A = F;
  double scale = n > 0 ? F.cwiseAbs().maxCoeff() : 0.0;
  if (n > 0 && scale == 0.0) throw SingularPivotError("partial_lu: zero matrix", 0, 0.0);
  for (Index kcol = 0; kcol < n; ++kcol) {
    cxd piv = A(kcol, kcol);
    if (std::abs(piv) < pivot_tol * scale)
      throw SingularPivotError("partial_lu: pivot " + std::to_string(kcol) + " below tolerance", kcol, std::abs(piv));
    if (kcol + 1 < n) {
      A.col(kcol).tail(n - kcol - 1) /= piv;
      A.bottomRightCorner(n - kcol - 1, n - kcol - 1).noalias() -=
          A.col(kcol).tail(n - kcol - 1) * A.row(kcol).segment(kcol + 1, n - kcol - 1);
    }
  }
  Mat L = Mat::Identity(n, n);
  Mat U = Mat::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = j + 1; i < n; ++i) L(i, j) = A(i, j);
    for (Index i = 0; i <= j; ++i) U(i, j) = A(i, j);
  }
  return {std::move(L), std::move(U)};
}

}  // namespace h2lu

#endif
