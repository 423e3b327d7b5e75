#ifndef H2LU_VERIFY_HPP
#define H2LU_VERIFY_HPP

#include <string>

#include "h2lu/factorization.hpp"
#include "h2lu/h2_matrix.hpp"
#include "h2lu/kernel.hpp"
#include "h2lu/types.hpp"

namespace h2lu {

// ||A x - b|| / ||b|| through the compressed operator.
inline double relative_residual(const H2Matrix& A, const Vec& x, const Vec& b) {
  if (x.size() != A.n() || b.size() != A.n()) throw InvalidInputError("relative_residual: vector length does not match the matrix");
  const double nb = b.norm();
  if (nb == 0.0) throw UndefinedMetricError("relative_residual: right-hand side is zero");
  return (h2_matvec(A, x) - b).norm() / nb;
}

// Reference solution straight from the assembled dense matrix (row-pivoted
// LU). Vectors are in tree ordering, like everything else here.
inline Vec dense_oracle_solve(const KernelSpec& kernel, const ClusterTree& tree, const Vec& b, Index guard = 4096) {
  if (tree.n() > guard)
    throw SizeGuardError("dense_oracle_solve: n = " + std::to_string(tree.n()) + " exceeds the dense guard " + std::to_string(guard));
  if (b.size() != tree.n()) throw InvalidInputError("dense_oracle_solve: right-hand side length does not match the tree");
  Mat Z = assemble_dense(kernel, tree);
  Vec x = Eigen::PartialPivLU<Mat>(Z).solve(b);
  if (!x.allFinite()) throw NonFiniteError("dense_oracle_solve: solution contains non-finite entries");
  return x;
}

struct ReplayFactors {
  Mat L, U;
};

// Expands the factor chain into explicit dense triangular-product factors:
// L = [prod over levels (prod_i Q_i L_i) P_l^T] L_root, and U mirrored with
// plain-transposed rotations. Strictly a verification device, so it is
// guarded to small problems.
inline ReplayFactors replay_factors(const FactorChain& chain, Index guard = 200) {
  const Index n = chain.n;
  if (n > guard)
    throw SizeGuardError("replay_factors: n = " + std::to_string(n) + " exceeds the replay guard " + std::to_string(guard));

  auto embed_q = [n](const EliminationRecord& rec) {
    Mat Q = Mat::Identity(n, n);
    Q.block(rec.pos, rec.pos, rec.bsize, rec.bsize) = rec.Qtilde;
    return Q;
  };
  auto embed_l = [n](const EliminationRecord& rec) {
    Mat L = Mat::Identity(n, n);
    if (rec.eliminated == 0) return L;
    L.block(rec.pos, rec.pos, rec.eliminated, rec.eliminated) = rec.L11;
    for (const auto& blk : rec.Lbar) L.block(blk.pos, rec.pos, blk.M.rows(), rec.eliminated) = blk.M;
    return L;
  };
  auto embed_u = [n](const EliminationRecord& rec) {
    Mat U = Mat::Identity(n, n);
    if (rec.eliminated == 0) return U;
    U.block(rec.pos, rec.pos, rec.eliminated, rec.eliminated) = rec.U11;
    for (const auto& blk : rec.Ubar) U.block(rec.pos, blk.pos, rec.eliminated, blk.M.cols()) = blk.M;
    return U;
  };
  auto embed_p = [n](const PermutationRecord& perm) {
    Mat P = Mat::Zero(n, n);
    for (Index j = 0; j < static_cast<Index>(perm.src.size()); ++j) P(j, perm.src[static_cast<size_t>(j)]) = 1.0;
    for (Index p = static_cast<Index>(perm.src.size()); p < n; ++p) P(p, p) = 1.0;
    return P;
  };

  ReplayFactors out;
  out.L = Mat::Identity(n, n);
  for (const LevelBlock& lb : chain.levels) {
    for (const EliminationRecord& rec : lb.recs) out.L = out.L * embed_q(rec) * embed_l(rec);
    out.L = out.L * embed_p(lb.perm).transpose();
  }
  Mat root_l = Mat::Identity(n, n);
  root_l.topLeftCorner(chain.root_size, chain.root_size) = chain.root_l;
  out.L = out.L * root_l;

  Mat root_u = Mat::Identity(n, n);
  root_u.topLeftCorner(chain.root_size, chain.root_size) = chain.root_u;
  out.U = root_u;
  for (auto lit = chain.levels.rbegin(); lit != chain.levels.rend(); ++lit) {
    out.U = out.U * embed_p(lit->perm);
    for (auto rit = lit->recs.rbegin(); rit != lit->recs.rend(); ++rit)
      out.U = out.U * embed_u(*rit) * embed_q(*rit).transpose();
  }
  return out;
}

// ||L U - Z|| / ||Z|| against the dense shadow of the factored matrix.
inline double replay_dense_shadow(const FactorChain& chain, const H2Matrix& A, Index guard = 200) {
  if (A.n() != chain.n) throw InvalidInputError("replay_dense_shadow: chain and matrix sizes differ");
  ReplayFactors f = replay_factors(chain, guard);
  Mat Z = A.dense_shadow();
  return (f.L * f.U - Z).norm() / Z.norm();
}

}  // namespace h2lu

#endif
