#ifndef H2LU_FACTORIZATION_HPP
#define H2LU_FACTORIZATION_HPP

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "h2lu/dense_kernels.hpp"
#include "h2lu/h2_matrix.hpp"
#include "h2lu/types.hpp"

namespace h2lu {

// One cluster's elimination at one level. Positions are absolute offsets into
// the active vector layout of that level, so the solver replays records
// without re-deriving the layout.
struct EliminationRecord {
  int cluster = -1;
  int level = -1;
  Index pos = 0;           // offset of the cluster's block in the active vector
  Index bsize = 0;         // block extent
  Index eliminated = 0;    // leading unknowns removed (bsize minus final rank)
  Index rank_before = 0;   // basis rank at level entry
  Index rank_after = 0;    // basis rank after the fill-in update
  Index fill_targets = 0;  // (row, col) destinations written by this elimination

  Mat Qtilde;  // bsize x bsize unitary, [complement | basis]
  Mat L11, U11;  // factors of the leading eliminated x eliminated block

  // Off-diagonal factor blocks, stored with the absolute positions they act
  // on. Forward pass: subtract M * t at [pos, pos + M.rows()). Backward pass:
  // gather M * x[pos, pos + M.cols()).
  struct Block {
    Index pos = 0;
    Mat M;
  };
  std::vector<Block> Lbar;
  std::vector<Block> Ubar;
};

// Reordering applied once a level is done: retained unknowns of sibling pairs
// become contiguous parent blocks at the front of the active range, the
// eliminated ones move to the tail. (P v)[j] = v[src[j]] on [0, src.size()),
// identity beyond; src is a bijection on that range.
struct PermutationRecord {
  int level = -1;
  std::vector<Index> src;
  Index active_after = 0;
};

struct LevelDiagnostics {
  int level = -1;
  Index rank_sum_before = 0;
  Index rank_sum_after = 0;
  Index eliminated = 0;
  Index ledger_blocks = 0;  // admissible blocks that absorbed fill-in at level end
  size_t chain_bytes = 0;   // cumulative factor storage after this level
};

struct LevelBlock {
  int level = -1;
  std::vector<EliminationRecord> recs;
  PermutationRecord perm;
  LevelDiagnostics diag;
};

// The complete factorization: per-level elimination records and permutations
// in the order produced, plus the dense LU of whatever remained once the stop
// level was merged. Enough to apply the inverse (solve.hpp) or to rebuild the
// triangular factors outright (verify.hpp).
struct FactorChain {
  std::shared_ptr<const ClusterTree> tree;
  Index n = 0;
  int stop_level = 0;  // coarsest level processed; depth+1 when none was
  double eps_fill_in = 0.0;
  std::vector<LevelBlock> levels;  // ordered finest to coarsest
  Mat root_l, root_u;
  Index root_size = 0;

  size_t storage_bytes() const {
    auto mat = [](const Mat& m) { return sizeof(cxd) * static_cast<size_t>(m.size()); };
    size_t total = mat(root_l) + mat(root_u);
    for (const auto& lb : levels) {
      total += sizeof(Index) * lb.perm.src.size();
      for (const auto& r : lb.recs) {
        total += mat(r.Qtilde) + mat(r.L11) + mat(r.U11);
        for (const auto& b : r.Lbar) total += mat(b.M);
        for (const auto& b : r.Ubar) total += mat(b.M);
      }
    }
    return total;
  }
};

namespace detail {

inline bool contains_pair(const std::vector<BlockPair>& v, int r, int c) {
  auto it = std::lower_bound(v.begin(), v.end(), std::make_pair(r, c), [](const BlockPair& p, const std::pair<int, int>& q) {
    return p.row < q.first || (p.row == q.first && p.col < q.second);
  });
  return it != v.end() && it->row == r && it->col == c;
}

}  // namespace detail

// Mutable working representation, driven level by level. The input H2Matrix
// is read-only; dense blocks and bases are copies. Vector layout at level l:
// [active blocks in cluster order | eliminated at l+1 | ... | eliminated at
// the leaf level], with `pos` holding each active cluster's offset.
struct FactorState {
  const H2Matrix* A = nullptr;
  double eps_fill_in = 0.0;
  int level = 0;
  Index active_len = 0;

  // Indexed by cluster id; meaningful for the current level's clusters.
  std::vector<Index> pos, bsz, kfin;
  std::vector<char> rotated;  // Qtilde applied (step 2 done)
  std::vector<Mat> basis;     // working basis: leaf basis or padded transfer, plus appended directions
  std::vector<Mat> qtilde;

  using BlockMap = std::map<std::pair<int, int>, Mat>;
  BlockMap dense;           // inadmissible blocks at the current level, current frames
  BlockMap ledger;          // fill-in deltas on current-level admissible blocks, level-entry frames
  BlockMap carried;         // fill-in deltas on blocks owned by coarser admissible ancestors
  BlockMap final_coupling;  // written by finish_level, consumed by merge_permute

  FactorChain chain;

  Index korig(int id) const { return A->bases[static_cast<size_t>(id)].rank(); }

  void init(const H2Matrix& mat, double eps) {
    A = &mat;
    eps_fill_in = eps;
    const ClusterTree& tree = *mat.tree;
    level = tree.depth();
    active_len = tree.n();
    const size_t nc = static_cast<size_t>(tree.num_clusters());
    pos.assign(nc, 0);
    bsz.assign(nc, 0);
    kfin.assign(nc, 0);
    rotated.assign(nc, 0);
    basis.assign(nc, Mat());
    qtilde.assign(nc, Mat());
    for (int id : tree.clusters_at(level)) {
      const Cluster& c = tree.cluster(id);
      pos[static_cast<size_t>(id)] = c.begin;
      bsz[static_cast<size_t>(id)] = c.size();
      kfin[static_cast<size_t>(id)] = korig(id);
      basis[static_cast<size_t>(id)] = mat.bases[static_cast<size_t>(id)].M;
    }
    const auto& leaves = mat.blocks->inadmissible_leaves();
    for (size_t i = 0; i < leaves.size(); ++i) dense[{leaves[i].row, leaves[i].col}] = mat.dense_blocks[i];
    chain.tree = mat.tree;
    chain.n = tree.n();
    chain.eps_fill_in = eps;
  }

  LevelBlock& level_block() {
    if (chain.levels.empty() || chain.levels.back().level != level) {
      chain.levels.emplace_back();
      chain.levels.back().level = level;
      chain.levels.back().perm.level = level;
      chain.levels.back().diag.level = level;
    }
    return chain.levels.back();
  }

  // Block content in its level-entry frame, pushed through the current
  // rotation state of each side. Rows/columns that were eliminated on a
  // rotated side are dropped, exactly as the elimination treats them.
  void place_block(Mat& Z, int t, int s, Mat M) const {
    const size_t ut = static_cast<size_t>(t), us = static_cast<size_t>(s);
    if (rotated[ut]) {
      M = qtilde[ut].adjoint() * M;
      M.topRows(bsz[ut] - kfin[ut]).setZero();
    }
    if (rotated[us]) {
      M = M * qtilde[us].conjugate();
      M.leftCols(bsz[us] - kfin[us]).setZero();
    }
    Z.block(pos[ut], pos[us], bsz[ut], bsz[us]) = M;
  }

  // Basis of a coarser cluster expressed over its current-level descendants:
  // pairs (descendant id, descendant block rows of the expanded basis).
  void expand_to_level(int id, const Mat& C, std::vector<std::pair<int, Mat>>& out) const {
    const Cluster& c = A->tree->cluster(id);
    if (c.level == level) {
      out.emplace_back(id, basis[static_cast<size_t>(id)].leftCols(korig(id)) * C);
      return;
    }
    const Mat& T = A->bases[static_cast<size_t>(id)].M;
    expand_to_level(c.children[0], T.topRows(korig(c.children[0])) * C, out);
    expand_to_level(c.children[1], T.bottomRows(korig(c.children[1])) * C, out);
  }

  // Paint every block of the remaining matrix in current coordinates: dense
  // blocks as held, admissible blocks from couplings plus ledger deltas, and
  // blocks owned by coarser admissible pairs from expanded couplings plus
  // carried deltas.
  void paint(Mat& Z) const {
    for (const auto& [key, D] : dense) Z.block(pos[static_cast<size_t>(key.first)], pos[static_cast<size_t>(key.second)], D.rows(), D.cols()) = D;
    const auto& adm = A->blocks->admissible(level);
    for (size_t idx = 0; idx < adm.size(); ++idx) {
      const int t = adm[idx].row, s = adm[idx].col;
      Mat M = basis[static_cast<size_t>(t)].leftCols(korig(t)) * A->couplings[static_cast<size_t>(level)][idx] *
              basis[static_cast<size_t>(s)].leftCols(korig(s)).transpose();
      if (auto it = ledger.find({t, s}); it != ledger.end()) M += it->second;
      place_block(Z, t, s, std::move(M));
    }
    const int l0 = A->blocks->l0();
    if (l0 < 0) return;
    for (int la = l0; la < level; ++la) {
      const auto& coarse = A->blocks->admissible(la);
      for (size_t idx = 0; idx < coarse.size(); ++idx) {
        std::vector<std::pair<int, Mat>> rows_side, cols_side;
        expand_to_level(coarse[idx].row, Mat::Identity(korig(coarse[idx].row), korig(coarse[idx].row)), rows_side);
        expand_to_level(coarse[idx].col, Mat::Identity(korig(coarse[idx].col), korig(coarse[idx].col)), cols_side);
        const Mat& S = A->couplings[static_cast<size_t>(la)][idx];
        for (const auto& [u, Du] : rows_side)
          for (const auto& [v, Dv] : cols_side) {
            Mat M = Du * S * Dv.transpose();
            if (auto it = carried.find({u, v}); it != carried.end()) M += it->second;
            place_block(Z, u, v, std::move(M));
          }
      }
    }
  }

  // Full working matrix in current coordinates; eliminated positions carry
  // identity rows/columns so the shadow stays square and invertible.
  Mat shadow() const {
    Mat Z = Mat::Zero(A->n(), A->n());
    for (Index p = active_len; p < A->n(); ++p) Z(p, p) = 1.0;
    paint(Z);
    return Z;
  }

  // Just the active part, used for the dense factorization of the remainder.
  Mat active_matrix() const {
    Mat Z = Mat::Zero(active_len, active_len);
    paint(Z);
    return Z;
  }
};

// Step 0: extend the cluster basis so it spans the fill-in accumulated on its
// admissible blocks. Row-side fills contribute their columns, column-side
// fills their transposed rows (the coupling form V_t S V_s^T pairs the column
// side by plain transpose). Truncation acts on the singular values of the
// complement-projected stack at eps_fill_in, floored at the unprojected scale
// so fully-captured fills add nothing; appended directions are
// re-orthogonalized against the existing columns. Returns the rank increase.
inline Index step0_update_basis(FactorState& st, int i) {
  const size_t ui = static_cast<size_t>(i);
  Mat& V = st.basis[ui];
  const Index b = st.bsz[ui];
  const Index k = V.cols();
  st.kfin[ui] = k;

  Index cols = 0;
  auto count = [&](const FactorState::BlockMap& m) {
    for (const auto& [key, F] : m) {
      if (key.first == i) cols += F.cols();
      if (key.second == i) cols += F.rows();
    }
  };
  count(st.ledger);
  count(st.carried);
  if (cols == 0 || k == b) return 0;

  Mat W(b, cols);
  Index at = 0;
  auto append = [&](const FactorState::BlockMap& m) {
    for (const auto& [key, F] : m) {
      if (key.first == i) {
        W.middleCols(at, F.cols()) = F;
        at += F.cols();
      }
      if (key.second == i) {
        W.middleCols(at, F.rows()) = F.transpose();
        at += F.rows();
      }
    }
  };
  append(st.ledger);
  append(st.carried);

  const double floor = st.eps_fill_in * W.colwise().norm().maxCoeff();
  if (k > 0) W -= V * (V.adjoint() * W).eval();
  Mat add = detail::truncated_row_basis(W, st.eps_fill_in, floor);
  const Index r = std::min<Index>(add.cols(), b - k);
  if (r == 0) return 0;
  Mat vnew(b, k + r);
  vnew.leftCols(k) = V;
  if (k > 0) {
    Mat polish = add.leftCols(r) - V * (V.adjoint() * add.leftCols(r)).eval();
    Eigen::HouseholderQR<Mat> qr(polish);
    vnew.rightCols(r) = qr.householderQ() * Mat::Identity(b, r);
  } else {
    vnew.rightCols(r) = add.leftCols(r);
  }
  V = std::move(vnew);
  st.kfin[ui] = k + r;
  return r;
}

// Step 1: the unitary change of basis [complement | basis]; the trailing
// coordinates are the retained (coefficient) part of the block. Opens this
// cluster's elimination record.
inline const Mat& step1_projection(FactorState& st, int i) {
  const size_t ui = static_cast<size_t>(i);
  const Mat& V = st.basis[ui];
  const Index b = st.bsz[ui];
  Mat qt(b, b);
  qt.leftCols(b - V.cols()) = unitary_completion(V);
  qt.rightCols(V.cols()) = V;

  EliminationRecord rec;
  rec.cluster = i;
  rec.level = st.level;
  rec.pos = st.pos[ui];
  rec.bsize = b;
  rec.eliminated = b - V.cols();
  rec.rank_before = st.korig(i);
  rec.rank_after = st.kfin[ui];
  rec.Qtilde = qt;
  st.qtilde[ui] = std::move(qt);

  LevelBlock& lb = st.level_block();
  lb.recs.push_back(std::move(rec));
  return lb.recs.back().Qtilde;
}

// Step 2: rotate the cluster's inadmissible row blocks by Qtilde^H and its
// column blocks by conj(Qtilde). Admissible blocks are never touched; their
// transform is implicit in the basis coordinates.
inline void step2_apply_projection(FactorState& st, int i, const Mat& Qtilde) {
  for (auto& [key, D] : st.dense) {
    if (key.first == i) D = Qtilde.adjoint() * D;
    if (key.second == i) D = D * Qtilde.conjugate();
  }
  st.rotated[static_cast<size_t>(i)] = 1;
}

namespace detail {

// Fill-in outside the dense map lands on an admissible block of this level
// (ledger) or on a block owned by a coarser admissible ancestor (carried).
// Entries hold the content delta in level-entry frames: a side already
// rotated away has exact zeros on its eliminated rows/columns, so lifting
// through its final basis loses nothing.
inline void deposit_fill(FactorState& st, int j, int k, Mat F) {
  if (st.rotated[static_cast<size_t>(j)]) F = st.basis[static_cast<size_t>(j)] * F.bottomRows(st.kfin[static_cast<size_t>(j)]);
  if (st.rotated[static_cast<size_t>(k)])
    F = F.rightCols(st.kfin[static_cast<size_t>(k)]) * st.basis[static_cast<size_t>(k)].transpose();
  auto& target = contains_pair(st.A->blocks->admissible(st.level), j, k) ? st.ledger : st.carried;
  auto [it, fresh] = target.try_emplace({j, k}, F);
  if (!fresh) it->second += F;
}

}  // namespace detail

// Step 3: unpivoted LU of the leading eliminated block, triangular solves for
// the off-diagonal factor blocks, and the Schur update of every (row
// neighbor, column neighbor) product. Updates for inadmissible targets are
// subtracted in place; the rest go to the ledger. Afterwards the eliminated
// rows/columns are zeroed and the diagonal head is set to identity, keeping
// the working matrix an exact representation of the partially factored
// system.
inline void step3_partial_eliminate(FactorState& st, int i) {
  const size_t ui = static_cast<size_t>(i);
  LevelBlock& lb = st.level_block();
  if (lb.recs.empty() || lb.recs.back().cluster != i)
    throw InvalidInputError("step3_partial_eliminate: cluster " + std::to_string(i) + " has no open elimination record");
  EliminationRecord& rec = lb.recs.back();

  const Index b = st.bsz[ui];
  const Index k = st.kfin[ui];
  const Index e = b - k;
  rec.eliminated = e;
  if (e == 0) return;

  Mat& Dii = st.dense.at({i, i});
  try {
    auto lu = partial_lu(Dii.topLeftCorner(e, e));
    rec.L11 = std::move(lu.first);
    rec.U11 = std::move(lu.second);
  } catch (const SingularPivotError& ex) {
    throw SingularPivotError(std::string(ex.what()) + " (cluster " + std::to_string(i) + ", level " + std::to_string(st.level) + ")",
                             ex.pivot_index, ex.pivot_magnitude, i, st.level);
  }

  // Row/column factor blocks. The self entries cover the retained part of the
  // diagonal block; every other neighbor contributes its full extent (rows or
  // columns already eliminated there are exact zeros).
  std::vector<std::pair<int, Mat>> rows, cols;
  for (const auto& [key, D] : st.dense) {
    if (key.first == i && key.second != i) cols.emplace_back(key.second, rec.L11.triangularView<Eigen::UnitLower>().solve(D.topRows(e)));
    if (key.second == i && key.first != i)
      rows.emplace_back(key.first, rec.U11.transpose().triangularView<Eigen::Lower>().solve(D.leftCols(e).transpose()).transpose());
  }
  if (k > 0) {
    cols.emplace_back(i, rec.L11.triangularView<Eigen::UnitLower>().solve(Dii.block(0, e, e, k)));
    rows.emplace_back(i, rec.U11.transpose().triangularView<Eigen::Lower>().solve(Dii.block(e, 0, k, e).transpose()).transpose());
  }

  for (const auto& [j, Lb] : rows) {
    for (const auto& [c, Ub] : cols) {
      auto it = st.dense.find({j, c});
      if (it != st.dense.end()) {
        const Index ro = (j == i) ? e : 0;
        const Index co = (c == i) ? e : 0;
        it->second.block(ro, co, Lb.rows(), Ub.cols()).noalias() -= Lb * Ub;
      } else {
        detail::deposit_fill(st, j, c, -(Lb * Ub));
      }
    }
  }
  rec.fill_targets = static_cast<Index>(rows.size() * cols.size());

  for (auto& [j, Lb] : rows) rec.Lbar.push_back({st.pos[static_cast<size_t>(j)] + (j == i ? e : Index(0)), std::move(Lb)});
  for (auto& [c, Ub] : cols) rec.Ubar.push_back({st.pos[static_cast<size_t>(c)] + (c == i ? e : Index(0)), std::move(Ub)});

  Dii.topLeftCorner(e, e) = Mat::Identity(e, e);
  if (k > 0) {
    Dii.block(0, e, e, k).setZero();
    Dii.block(e, 0, k, e).setZero();
  }
  for (auto& [key, D] : st.dense) {
    if (key.first == i && key.second != i) D.topRows(e).setZero();
    if (key.second == i && key.first != i) D.leftCols(e).setZero();
  }
}

// Level end: absorb the ledger into the couplings (original coefficients in
// the leading corner, fill-in projected onto the final bases) and zero-pad
// the parent transfers for the children's rank growth.
inline void finish_level(FactorState& st) {
  const auto& adm = st.A->blocks->admissible(st.level);
  const auto& coup = st.A->couplings[static_cast<size_t>(st.level)];
  size_t absorbed = 0;
  for (size_t idx = 0; idx < adm.size(); ++idx) {
    const int t = adm[idx].row, s = adm[idx].col;
    const size_t ut = static_cast<size_t>(t), us = static_cast<size_t>(s);
    Mat sf = Mat::Zero(st.kfin[ut], st.kfin[us]);
    sf.topLeftCorner(st.korig(t), st.korig(s)) = coup[idx];
    if (auto it = st.ledger.find({t, s}); it != st.ledger.end()) {
      sf += st.basis[ut].adjoint() * it->second * st.basis[us].conjugate();
      ++absorbed;
    }
    st.final_coupling[{t, s}] = std::move(sf);
  }
  if (absorbed != st.ledger.size()) throw InvalidInputError("finish_level: ledger holds a key that is not admissible at this level");
  st.ledger.clear();
  st.level_block().diag.ledger_blocks = static_cast<Index>(absorbed);

  if (st.level > 0) {
    for (int t : st.A->tree->clusters_at(st.level - 1)) {
      const Cluster& c = st.A->tree->cluster(t);
      const int c1 = c.children[0], c2 = c.children[1];
      const Mat& T = st.A->bases[static_cast<size_t>(t)].M;
      Mat padded = Mat::Zero(st.kfin[static_cast<size_t>(c1)] + st.kfin[static_cast<size_t>(c2)], T.cols());
      padded.topRows(st.korig(c1)) = T.topRows(st.korig(c1));
      padded.middleRows(st.kfin[static_cast<size_t>(c1)], st.korig(c2)) = T.bottomRows(st.korig(c2));
      st.basis[static_cast<size_t>(t)] = std::move(padded);
    }
  }
}

// Merge to the parent level. Retained sibling coefficients become contiguous
// parent blocks at the front of the active range; eliminated unknowns are
// appended to the tail in cluster order. Subdivided parent blocks are
// materialized dense from their children's retained content (final coupling
// for admissible children, trailing corner for dense ones); carried fill-in
// is projected to retained coefficients and re-embedded one level up.
inline void merge_permute(FactorState& st) {
  const ClusterTree& tree = *st.A->tree;
  const int l = st.level;
  const int lp = l - 1;
  LevelBlock& lb = st.level_block();

  auto kf = [&](int id) { return st.kfin[static_cast<size_t>(id)]; };
  auto elim_of = [&](int id) { return st.bsz[static_cast<size_t>(id)] - kf(id); };

  PermutationRecord perm;
  perm.level = l;
  perm.src.reserve(static_cast<size_t>(st.active_len));
  for (int t : tree.clusters_at(lp)) {
    const Cluster& c = tree.cluster(t);
    for (int child : {c.children[0], c.children[1]}) {
      const Index base = st.pos[static_cast<size_t>(child)] + elim_of(child);
      for (Index q = 0; q < kf(child); ++q) perm.src.push_back(base + q);
    }
  }
  const Index active_new = static_cast<Index>(perm.src.size());
  for (int i : tree.clusters_at(l)) {
    const Index base = st.pos[static_cast<size_t>(i)];
    for (Index q = 0; q < elim_of(i); ++q) perm.src.push_back(base + q);
  }
  if (static_cast<Index>(perm.src.size()) != st.active_len)
    throw InvalidInputError("merge_permute: active layout does not add up");
  perm.active_after = active_new;

  FactorState::BlockMap ndense;
  for (const BlockPair& p : st.A->blocks->split(lp)) {
    const Cluster& t = tree.cluster(p.row);
    const Cluster& s = tree.cluster(p.col);
    Mat D(kf(t.children[0]) + kf(t.children[1]), kf(s.children[0]) + kf(s.children[1]));
    Index ro = 0;
    for (int a : {t.children[0], t.children[1]}) {
      Index co = 0;
      for (int c : {s.children[0], s.children[1]}) {
        if (auto it = st.final_coupling.find({a, c}); it != st.final_coupling.end()) {
          D.block(ro, co, kf(a), kf(c)) = it->second;
        } else {
          auto dit = st.dense.find({a, c});
          if (dit == st.dense.end()) throw InvalidInputError("merge_permute: child block is neither dense nor admissible");
          D.block(ro, co, kf(a), kf(c)) = dit->second.block(elim_of(a), elim_of(c), kf(a), kf(c));
        }
        co += kf(c);
      }
      ro += kf(a);
    }
    ndense[{p.row, p.col}] = std::move(D);
  }

  FactorState::BlockMap moved;
  for (const auto& [key, F] : st.carried) {
    const int j = key.first, c = key.second;
    const Cluster& cj = tree.cluster(j);
    const Cluster& cc = tree.cluster(c);
    const int pj = cj.parent, pc = cc.parent;
    Mat proj = st.basis[static_cast<size_t>(j)].adjoint() * F * st.basis[static_cast<size_t>(c)].conjugate();
    const Index ro = (j == tree.cluster(pj).children[0]) ? 0 : kf(tree.cluster(pj).children[0]);
    const Index co = (c == tree.cluster(pc).children[0]) ? 0 : kf(tree.cluster(pc).children[0]);
    const Index bpj = kf(tree.cluster(pj).children[0]) + kf(tree.cluster(pj).children[1]);
    const Index bpc = kf(tree.cluster(pc).children[0]) + kf(tree.cluster(pc).children[1]);
    auto [it, fresh] = moved.try_emplace({pj, pc}, Mat::Zero(bpj, bpc));
    it->second.block(ro, co, proj.rows(), proj.cols()) += proj;
  }
  st.carried.clear();
  for (auto& [key, F] : moved) {
    if (detail::contains_pair(st.A->blocks->admissible(lp), key.first, key.second)) {
      st.ledger[key] = std::move(F);
    } else if (ndense.count(key)) {
      throw InvalidInputError("merge_permute: carried fill-in resurfaced on a dense block");
    } else {
      st.carried[key] = std::move(F);
    }
  }

  lb.diag.rank_sum_before = 0;
  lb.diag.rank_sum_after = 0;
  lb.diag.eliminated = 0;
  for (int i : tree.clusters_at(l)) {
    lb.diag.rank_sum_before += st.korig(i);
    lb.diag.rank_sum_after += kf(i);
    lb.diag.eliminated += elim_of(i);
  }

  Index off = 0;
  for (int t : tree.clusters_at(lp)) {
    const Cluster& c = tree.cluster(t);
    st.pos[static_cast<size_t>(t)] = off;
    st.bsz[static_cast<size_t>(t)] = kf(c.children[0]) + kf(c.children[1]);
    off += st.bsz[static_cast<size_t>(t)];
    st.kfin[static_cast<size_t>(t)] = st.basis[static_cast<size_t>(t)].cols();
  }
  if (off != active_new) throw InvalidInputError("merge_permute: parent layout does not match the permutation");

  st.dense = std::move(ndense);
  st.final_coupling.clear();
  lb.perm = std::move(perm);
  st.level = lp;
  st.active_len = active_new;
  lb.diag.chain_bytes = st.chain.storage_bytes();
}

// Observation points for tests and traces; each fires with the state fully
// consistent for FactorState::shadow().
struct FactorizeHooks {
  std::function<void(const FactorState&, int)> after_basis_update;
  std::function<void(const FactorState&, int)> after_projection;
  std::function<void(const FactorState&, int)> after_elimination;
  std::function<void(const FactorState&)> after_merge;
};

// Level-by-level partial elimination of an H2 matrix. Levels depth..stop are
// processed (stop defaults to the coarsest level with admissible blocks);
// whatever remains is materialized dense and LU-factored without pivoting.
// A geometry with no admissible blocks at all goes straight to the dense
// root. A level that eliminates nothing ends the descent early.
inline FactorChain factorize(const H2Matrix& A, double eps_fill_in, std::optional<int> stop_level_override = std::nullopt,
                             const FactorizeHooks* hooks = nullptr) {
  if (eps_fill_in <= 0.0) throw InvalidInputError("factorize: eps_fill_in must be positive");
  FactorState st;
  st.init(A, eps_fill_in);
  const int L = A.depth();
  const int l0 = A.blocks->l0();
  int stop = L + 1;
  if (l0 >= 0) {
    stop = stop_level_override.value_or(l0);
    if (stop < l0 || stop > L)
      throw InvalidInputError("factorize: stop level " + std::to_string(stop) + " outside [" + std::to_string(l0) + ", " +
                              std::to_string(L) + "]");
  }
  st.chain.stop_level = stop;

  for (int l = L; l >= stop; --l) {
    Index elim_total = 0;
    for (int i : A.tree->clusters_at(l)) {
      step0_update_basis(st, i);
      if (hooks && hooks->after_basis_update) hooks->after_basis_update(st, i);
      const Mat& qt = step1_projection(st, i);
      step2_apply_projection(st, i, qt);
      if (hooks && hooks->after_projection) hooks->after_projection(st, i);
      step3_partial_eliminate(st, i);
      if (hooks && hooks->after_elimination) hooks->after_elimination(st, i);
      elim_total += st.bsz[static_cast<size_t>(i)] - st.kfin[static_cast<size_t>(i)];
    }
    finish_level(st);
    merge_permute(st);
    if (hooks && hooks->after_merge) hooks->after_merge(st);
    if (elim_total == 0 && l > stop) {
      st.chain.stop_level = l;
      break;
    }
  }

  Mat root = st.active_matrix();
  st.chain.root_size = root.rows();
  if (root.rows() > 0) {
    try {
      auto lu = partial_lu(root);
      st.chain.root_l = std::move(lu.first);
      st.chain.root_u = std::move(lu.second);
    } catch (const SingularPivotError& ex) {
      throw SingularPivotError(std::string(ex.what()) + " (root block after level " + std::to_string(st.chain.stop_level) + ")",
                               ex.pivot_index, ex.pivot_magnitude, -1, st.chain.stop_level);
    }
  } else {
    st.chain.root_l = Mat(0, 0);
    st.chain.root_u = Mat(0, 0);
  }
  return std::move(st.chain);
}

}  // namespace h2lu

#endif
