#ifndef H2LU_SOLVE_HPP
#define H2LU_SOLVE_HPP

#include "h2lu/factorization.hpp"
#include "h2lu/types.hpp"

namespace h2lu {

namespace detail {

inline void check_rhs(const FactorChain& chain, const Vec& b) {
  if (b.size() != chain.n)
    throw InvalidInputError("solve: right-hand side has length " + std::to_string(b.size()) + ", factorization expects " +
                            std::to_string(chain.n));
  if (!b.allFinite()) throw NonFiniteError("solve: right-hand side contains non-finite entries");
}

inline void permute_gather(Vec& v, const std::vector<Index>& src, Vec& scratch) {
  const Index m = static_cast<Index>(src.size());
  if (scratch.size() < m) scratch.resize(m);
  for (Index j = 0; j < m; ++j) scratch[j] = v[src[static_cast<size_t>(j)]];
  v.head(m) = scratch.head(m);
}

inline void permute_scatter(Vec& v, const std::vector<Index>& src, Vec& scratch) {
  const Index m = static_cast<Index>(src.size());
  if (scratch.size() < m) scratch.resize(m);
  for (Index j = 0; j < m; ++j) scratch[src[static_cast<size_t>(j)]] = v[j];
  v.head(m) = scratch.head(m);
}

}  // namespace detail

// Reusable scratch so repeated solves with one chain allocate nothing.
struct SolveWorkspace {
  Vec scratch;
};

// Applies the inverse of the lower factor in place: per level, rotate each
// cluster block to its working frame, solve the leading triangular system,
// and subtract the off-diagonal factor blocks at their recorded positions;
// then the level permutation, and finally the dense root.
inline void forward_substitute_in_place(const FactorChain& chain, Vec& b, SolveWorkspace& ws) {
  detail::check_rhs(chain, b);
  for (const LevelBlock& lb : chain.levels) {
    for (const EliminationRecord& rec : lb.recs) {
      b.segment(rec.pos, rec.bsize) = rec.Qtilde.adjoint() * b.segment(rec.pos, rec.bsize);
      if (rec.eliminated == 0) continue;
      auto head = b.segment(rec.pos, rec.eliminated);
      rec.L11.triangularView<Eigen::UnitLower>().solveInPlace(head);
      for (const auto& blk : rec.Lbar) b.segment(blk.pos, blk.M.rows()).noalias() -= blk.M * head;
    }
    detail::permute_gather(b, lb.perm.src, ws.scratch);
  }
  if (chain.root_size > 0) {
    auto head = b.head(chain.root_size);
    chain.root_l.triangularView<Eigen::UnitLower>().solveInPlace(head);
  }
}

// Applies the inverse of the upper factor in place: the dense root first,
// then levels coarsest to finest, undoing the permutation, solving each
// cluster's triangular system against the gathered off-diagonal blocks, and
// rotating the block back to original coordinates.
inline void backward_substitute_in_place(const FactorChain& chain, Vec& y, SolveWorkspace& ws) {
  detail::check_rhs(chain, y);
  if (chain.root_size > 0) {
    auto head = y.head(chain.root_size);
    chain.root_u.triangularView<Eigen::Upper>().solveInPlace(head);
  }
  for (auto lit = chain.levels.rbegin(); lit != chain.levels.rend(); ++lit) {
    detail::permute_scatter(y, lit->perm.src, ws.scratch);
    for (auto rit = lit->recs.rbegin(); rit != lit->recs.rend(); ++rit) {
      const EliminationRecord& rec = *rit;
      if (rec.eliminated > 0) {
        auto head = y.segment(rec.pos, rec.eliminated);
        for (const auto& blk : rec.Ubar) head.noalias() -= blk.M * y.segment(blk.pos, blk.M.cols());
        rec.U11.triangularView<Eigen::Upper>().solveInPlace(head);
      }
      y.segment(rec.pos, rec.bsize) = rec.Qtilde.conjugate() * y.segment(rec.pos, rec.bsize);
    }
  }
}

inline Vec forward_substitute(const FactorChain& chain, const Vec& b) {
  Vec y = b;
  SolveWorkspace ws;
  forward_substitute_in_place(chain, y, ws);
  return y;
}

inline Vec backward_substitute(const FactorChain& chain, const Vec& y) {
  Vec x = y;
  SolveWorkspace ws;
  backward_substitute_in_place(chain, x, ws);
  return x;
}

inline void solve_in_place(const FactorChain& chain, Vec& b, SolveWorkspace& ws) {
  forward_substitute_in_place(chain, b, ws);
  backward_substitute_in_place(chain, b, ws);
}

// x with A x ~ b through the recorded factors; the chain and b are untouched.
inline Vec solve(const FactorChain& chain, const Vec& b) {
  Vec x = b;
  SolveWorkspace ws;
  solve_in_place(chain, x, ws);
  return x;
}

// Same operation under the name callers reaching for an inverse expect.
inline Vec apply_inverse(const FactorChain& chain, const Vec& b) { return solve(chain, b); }

}  // namespace h2lu

#endif
