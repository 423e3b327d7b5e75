#ifndef H2LU_H2_MATRIX_HPP
#define H2LU_H2_MATRIX_HPP

#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "h2lu/block_tree.hpp"
#include "h2lu/dense_kernels.hpp"
#include "h2lu/kernel.hpp"
#include "h2lu/types.hpp"

namespace h2lu {

// Per-cluster basis with nesting: leaves store V (points x rank), non-leaf
// clusters store the stacked transfer matrix [T_c1; T_c2] whose row blocks are
// indexed by the children's ranks. Columns are orthonormal in the expanded
// sense (diag(V_c1,V_c2) * T has orthonormal columns).
struct ClusterBasis {
  Mat M;
  Index rank() const { return M.cols(); }
};

struct H2Options {
  Index shadow_guard = 4000;  // dense_shadow refusal threshold
};

class H2Matrix {
 public:
  std::shared_ptr<const ClusterTree> tree;
  std::shared_ptr<const BlockClusterTree> blocks;
  double eps_h2 = 0.0;

  std::vector<ClusterBasis> bases;            // by cluster id
  std::vector<std::vector<Mat>> couplings;    // [level][i] aligned with blocks->admissible(level)
  std::vector<Mat> dense_blocks;              // aligned with blocks->inadmissible_leaves()
  Index shadow_guard = 4000;

  Index n() const { return tree->n(); }
  int depth() const { return tree->depth(); }

  // Expanded basis of a cluster (points-of-cluster x rank).
  Mat expand_basis(int id) const {
    const Cluster& c = tree->cluster(id);
    if (c.is_leaf()) return bases[static_cast<size_t>(id)].M;
    Mat E1 = expand_basis(c.children[0]);
    Mat E2 = expand_basis(c.children[1]);
    const Mat& T = bases[static_cast<size_t>(id)].M;
    if (T.rows() != E1.cols() + E2.cols())
      throw InvalidInputError("expand_basis: transfer rows do not match child ranks");
    Mat E(c.size(), T.cols());
    E.topRows(E1.rows()).noalias() = E1 * T.topRows(E1.cols());
    E.bottomRows(E2.rows()).noalias() = E2 * T.bottomRows(E2.cols());
    return E;
  }

  const Mat* coupling(int row, int col) const {
    int level = tree->cluster(row).level;
    const auto& adm = blocks->admissible(level);
    for (size_t i = 0; i < adm.size(); ++i)
      if (adm[i].row == row && adm[i].col == col) return &couplings[static_cast<size_t>(level)][i];
    return nullptr;
  }

  const Mat* dense_block(int row, int col) const {
    const auto& inadm = blocks->inadmissible_leaves();
    for (size_t i = 0; i < inadm.size(); ++i)
      if (inadm[i].row == row && inadm[i].col == col) return &dense_blocks[i];
    return nullptr;
  }

  // Dense content of one admissible block, Z_ts ~= V_t S (V_s)^T.
  Mat reconstruct_block(int row, int col) const {
    const Mat* S = coupling(row, col);
    if (!S) throw InvalidInputError("reconstruct_block: block is not admissible");
    return expand_basis(row) * (*S) * expand_basis(col).transpose();
  }

  Vec matvec(const Vec& x) const {
    if (x.size() != n()) throw InvalidInputError("matvec: dimension mismatch");
    const int L = depth();
    std::vector<Vec> xhat(static_cast<size_t>(tree->num_clusters()));
    std::vector<Vec> yhat(static_cast<size_t>(tree->num_clusters()));

    // upward: xhat_c = V_c^T x_c  (plain transpose)
    for (int l = L; l >= 0; --l) {
      for (int id : tree->clusters_at(l)) {
        const Cluster& c = tree->cluster(id);
        const Mat& B = bases[static_cast<size_t>(id)].M;
        if (c.is_leaf()) {
          xhat[static_cast<size_t>(id)] = B.transpose() * x.segment(c.begin, c.size());
        } else {
          const Vec& x1 = xhat[static_cast<size_t>(c.children[0])];
          const Vec& x2 = xhat[static_cast<size_t>(c.children[1])];
          Vec stacked(x1.size() + x2.size());
          stacked << x1, x2;
          xhat[static_cast<size_t>(id)] = B.transpose() * stacked;
        }
        yhat[static_cast<size_t>(id)] = Vec::Zero(bases[static_cast<size_t>(id)].rank());
      }
    }

    for (int l = 0; l <= L; ++l) {
      const auto& adm = blocks->admissible(l);
      for (size_t i = 0; i < adm.size(); ++i)
        yhat[static_cast<size_t>(adm[i].row)].noalias() +=
            couplings[static_cast<size_t>(l)][i] * xhat[static_cast<size_t>(adm[i].col)];
    }

    // downward: y_c += V_c yhat_c, pushing through transfers
    Vec y = Vec::Zero(n());
    for (int l = 0; l <= L; ++l) {
      for (int id : tree->clusters_at(l)) {
        const Cluster& c = tree->cluster(id);
        const Mat& B = bases[static_cast<size_t>(id)].M;
        const Vec& yh = yhat[static_cast<size_t>(id)];
        if (yh.size() == 0) continue;
        if (c.is_leaf()) {
          y.segment(c.begin, c.size()).noalias() += B * yh;
        } else {
          Vec pushed = B * yh;
          Index k1 = bases[static_cast<size_t>(c.children[0])].rank();
          yhat[static_cast<size_t>(c.children[0])] += pushed.head(k1);
          yhat[static_cast<size_t>(c.children[1])] += pushed.tail(pushed.size() - k1);
        }
      }
    }

    const auto& inadm = blocks->inadmissible_leaves();
    for (size_t i = 0; i < inadm.size(); ++i) {
      const Cluster& t = tree->cluster(inadm[i].row);
      const Cluster& s = tree->cluster(inadm[i].col);
      y.segment(t.begin, t.size()).noalias() += dense_blocks[i] * x.segment(s.begin, s.size());
    }
    return y;
  }

  // Explicit dense reconstruction of the whole compressed matrix.
  Mat dense_shadow() const {
    if (n() > shadow_guard)
      throw SizeGuardError("dense_shadow: n=" + std::to_string(n()) + " exceeds guard " + std::to_string(shadow_guard));
    Mat Z = Mat::Zero(n(), n());
    for (int l = 0; l <= depth(); ++l) {
      const auto& adm = blocks->admissible(l);
      for (size_t i = 0; i < adm.size(); ++i) {
        const Cluster& t = tree->cluster(adm[i].row);
        const Cluster& s = tree->cluster(adm[i].col);
        Z.block(t.begin, s.begin, t.size(), s.size()) =
            expand_basis(adm[i].row) * couplings[static_cast<size_t>(l)][i] * expand_basis(adm[i].col).transpose();
      }
    }
    const auto& inadm = blocks->inadmissible_leaves();
    for (size_t i = 0; i < inadm.size(); ++i) {
      const Cluster& t = tree->cluster(inadm[i].row);
      const Cluster& s = tree->cluster(inadm[i].col);
      Z.block(t.begin, s.begin, t.size(), s.size()) = dense_blocks[i];
    }
    return Z;
  }

  size_t storage_bytes() const {
    size_t b = 0;
    for (const auto& cb : bases) b += sizeof(cxd) * static_cast<size_t>(cb.M.size());
    for (const auto& lvl : couplings)
      for (const auto& S : lvl) b += sizeof(cxd) * static_cast<size_t>(S.size());
    for (const auto& D : dense_blocks) b += sizeof(cxd) * static_cast<size_t>(D.size());
    b += sizeof(Index) * tree->perm().size();
    return b;
  }

  std::vector<Index> rank_per_level_max() const {
    std::vector<Index> out(static_cast<size_t>(depth()) + 1, 0);
    for (int l = 0; l <= depth(); ++l)
      for (int id : tree->clusters_at(l))
        out[static_cast<size_t>(l)] = std::max(out[static_cast<size_t>(l)], bases[static_cast<size_t>(id)].rank());
    return out;
  }
};

namespace detail {

// Far-field sample index sets of a cluster, inherited down from ancestors.
// `cols` are the column ranges of admissible partners where the cluster acts
// as the block row; `rows` are the row ranges where it acts as the block
// column. A basis built from both sides spans each admissible block's column
// space and its transposed row space, which the coupling form V_t S V_s^T
// needs for unsymmetric kernels.
struct FarField {
  std::vector<IndexRange> cols;
  std::vector<IndexRange> rows;
};

inline void merge_ranges(std::vector<IndexRange>& v) {
  std::sort(v.begin(), v.end(), [](const IndexRange& a, const IndexRange& b) { return a.begin < b.begin; });
  std::vector<IndexRange> merged;
  for (const auto& r : v) {
    if (!merged.empty() && merged.back().end >= r.begin)
      merged.back().end = std::max(merged.back().end, r.end);
    else
      merged.push_back(r);
  }
  v = std::move(merged);
}

inline std::vector<FarField> far_field(const BlockClusterTree& blocks) {
  const ClusterTree& tree = blocks.tree();
  std::vector<FarField> far(static_cast<size_t>(tree.num_clusters()));
  for (int l = 0; l <= tree.depth(); ++l) {
    for (int id : tree.clusters_at(l)) {
      const Cluster& c = tree.cluster(id);
      if (c.parent >= 0) far[static_cast<size_t>(id)] = far[static_cast<size_t>(c.parent)];
    }
    for (const auto& p : blocks.admissible(l)) {
      const Cluster& t = tree.cluster(p.row);
      const Cluster& s = tree.cluster(p.col);
      far[static_cast<size_t>(p.row)].cols.push_back({s.begin, s.end});
      far[static_cast<size_t>(p.col)].rows.push_back({t.begin, t.end});
    }
  }
  for (auto& f : far) {
    merge_ranges(f.cols);
    merge_ranges(f.rows);
  }
  return far;
}

inline std::vector<Index> flatten(const std::vector<IndexRange>& ranges) {
  std::vector<Index> idx;
  for (const auto& r : ranges)
    for (Index i = r.begin; i < r.end; ++i) idx.push_back(i);
  return idx;
}

// hat_x = V_c^H Z[rows(c), cols] computed through the nested basis, bottoming
// out at leaf kernel blocks. cols are absolute tree-order indices.
inline Mat project_rows(const H2Matrix& A, const KernelSpec& kernel, int id, const std::vector<Index>& cols) {
  const ClusterTree& tree = *A.tree;
  const Cluster& c = tree.cluster(id);
  const Mat& B = A.bases[static_cast<size_t>(id)].M;
  if (c.is_leaf()) {
    Mat Z = assemble_block(kernel, tree, {c.begin, c.end}, cols);
    return B.adjoint() * Z;
  }
  Mat P1 = project_rows(A, kernel, c.children[0], cols);
  Mat P2 = project_rows(A, kernel, c.children[1], cols);
  Mat stacked(P1.rows() + P2.rows(), P1.cols());
  stacked << P1, P2;
  return B.adjoint() * stacked;
}

// Z[rows, cols(c)] * conj(expand_basis(c)) without ever expanding: transfers
// fold the child products together. rows are absolute tree-order indices.
inline Mat project_cols(const H2Matrix& A, const KernelSpec& kernel, int id, const std::vector<Index>& rows) {
  const ClusterTree& tree = *A.tree;
  const Cluster& c = tree.cluster(id);
  const Mat& B = A.bases[static_cast<size_t>(id)].M;
  if (c.is_leaf()) {
    Mat Z = assemble_block(kernel, tree, rows, {c.begin, c.end});
    return Z * B.conjugate();
  }
  Mat P1 = project_cols(A, kernel, c.children[0], rows);
  Mat P2 = project_cols(A, kernel, c.children[1], rows);
  Mat cat(P1.rows(), P1.cols() + P2.cols());
  cat << P1, P2;
  return cat * B.conjugate();
}

// Left singular vectors of a wide block B, truncated at sigma_j <= eps*sigma_0.
// B is first reduced by a QR of its adjoint so the SVD runs on a small square
// factor; this keeps small singular values accurate to machine precision.
// `floor` gives an absolute cutoff on top of the relative rule; callers that
// project B first use it to keep the threshold tied to the unprojected scale.
inline Mat truncated_row_basis(const Mat& B, double eps, double floor = 0.0) {
  const Index m = B.rows();
  const Index f = B.cols();
  if (m == 0 || f == 0) return Mat(m, 0);
  Mat R;
  if (f > m) {
    Eigen::HouseholderQR<Mat> qr(B.adjoint());
    R = qr.matrixQR().topRows(std::min(f, m)).triangularView<Eigen::Upper>();
  } else {
    R = B.adjoint();
  }
  Eigen::JacobiSVD<Mat> svd(R.adjoint(), Eigen::ComputeThinU);
  const auto& sig = svd.singularValues();
  if (sig.size() == 0 || sig[0] == 0.0) return Mat(m, 0);
  double threshold = std::max({eps * sig[0], floor, 1e-300});
  Index r = 0;
  while (r < sig.size() && sig[r] > threshold) ++r;
  return svd.matrixU().leftCols(r);
}

}  // namespace detail

// Bottom-up algebraic construction. Each cluster basis is the truncated left
// singular space of its far-field row block; non-leaf levels work on rows
// already projected through the children, which preserves nesting. Truncation
// uses the relative rule sigma_j <= eps_h2 * sigma_0.
inline H2Matrix build_h2(const KernelSpec& kernel, std::shared_ptr<const BlockClusterTree> blocks_in, double eps_h2,
                         const H2Options& opts = {}) {
  if (eps_h2 <= 0.0) throw InvalidInputError("build_h2: eps_h2 must be positive");
  H2Matrix A;
  A.blocks = std::move(blocks_in);
  A.tree = A.blocks->tree_ptr();
  A.eps_h2 = eps_h2;
  A.shadow_guard = opts.shadow_guard;

  const ClusterTree& tree = *A.tree;
  const BlockClusterTree& blocks = *A.blocks;
  const int L = tree.depth();
  A.bases.resize(static_cast<size_t>(tree.num_clusters()));

  auto far = detail::far_field(blocks);

  for (int l = L; l >= 0; --l) {
    for (int id : tree.clusters_at(l)) {
      const Cluster& c = tree.cluster(id);
      std::vector<Index> scols = detail::flatten(far[static_cast<size_t>(id)].cols);
      std::vector<Index> srows = detail::flatten(far[static_cast<size_t>(id)].rows);
      Index local = c.is_leaf() ? c.size()
                                : A.bases[static_cast<size_t>(c.children[0])].rank() +
                                      A.bases[static_cast<size_t>(c.children[1])].rank();
      if ((scols.empty() && srows.empty()) || local == 0) {
        A.bases[static_cast<size_t>(id)].M = Mat(local, 0);
        continue;
      }
      // Sample [Z(c, far) | Z(far, c)^T]: the left part carries the column
      // spaces of blocks where c is the row partner; the right part carries
      // range(Z^T) of blocks where c is the column partner, which the coupling
      // form V_t S V_s^T needs on the right. Plain transpose, not adjoint: for
      // a symmetric kernel Z(far,c)^T equals Z(c,far) entry for entry, so
      // ranks match the one-sided sample there.
      Mat B(local, static_cast<Index>(scols.size() + srows.size()));
      if (c.is_leaf()) {
        B.leftCols(static_cast<Index>(scols.size())) = assemble_block(kernel, tree, {c.begin, c.end}, scols);
        B.rightCols(static_cast<Index>(srows.size())) =
            assemble_block(kernel, tree, srows, {c.begin, c.end}).transpose();
      } else {
        Index k1 = A.bases[static_cast<size_t>(c.children[0])].rank();
        B.topLeftCorner(k1, static_cast<Index>(scols.size())) = detail::project_rows(A, kernel, c.children[0], scols);
        B.bottomLeftCorner(local - k1, static_cast<Index>(scols.size())) =
            detail::project_rows(A, kernel, c.children[1], scols);
        B.topRightCorner(k1, static_cast<Index>(srows.size())) =
            detail::project_cols(A, kernel, c.children[0], srows).transpose();
        B.bottomRightCorner(local - k1, static_cast<Index>(srows.size())) =
            detail::project_cols(A, kernel, c.children[1], srows).transpose();
      }
      A.bases[static_cast<size_t>(id)].M = detail::truncated_row_basis(B, eps_h2);
    }
  }

  A.couplings.resize(static_cast<size_t>(L) + 1);
  for (int l = 0; l <= L; ++l) {
    const auto& adm = blocks.admissible(l);
    A.couplings[static_cast<size_t>(l)].resize(adm.size());
    for (size_t i = 0; i < adm.size(); ++i) {
      const Cluster& s = tree.cluster(adm[i].col);
      std::vector<Index> cols(static_cast<size_t>(s.size()));
      std::iota(cols.begin(), cols.end(), s.begin);
      Mat P = detail::project_rows(A, kernel, adm[i].row, cols);  // k_t x #s
      Mat Vs = A.expand_basis(adm[i].col);
      A.couplings[static_cast<size_t>(l)][i] = P * Vs.conjugate();
    }
  }

  const auto& inadm = blocks.inadmissible_leaves();
  A.dense_blocks.resize(inadm.size());
  for (size_t i = 0; i < inadm.size(); ++i) {
    const Cluster& t = tree.cluster(inadm[i].row);
    const Cluster& s = tree.cluster(inadm[i].col);
    A.dense_blocks[i] = assemble_block(kernel, tree, IndexRange{t.begin, t.end}, IndexRange{s.begin, s.end});
  }
  return A;
}

inline Vec h2_matvec(const H2Matrix& A, const Vec& x) { return A.matvec(x); }

}  // namespace h2lu

#endif
