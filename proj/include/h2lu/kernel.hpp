#ifndef H2LU_KERNEL_HPP
#define H2LU_KERNEL_HPP

#include <cmath>
#include <functional>
#include <numbers>

#include "h2lu/cluster_tree.hpp"
#include "h2lu/types.hpp"

namespace h2lu {

enum class KernelKind { laplace, helmholtz, custom };

// Off-diagonal entries come from the kernel formula on the permuted points;
// every diagonal entry (same index, not same position) is diagonal_shift.
struct KernelSpec {
  KernelKind kind = KernelKind::laplace;
  cxd wavenumber = cxd(0.0, 0.0);  // helmholtz only, exp(-i*k*r)/(4*pi*r)
  double diagonal_shift = 1.0;
  std::function<cxd(const Vec3&, const Vec3&)> custom;

  cxd entry(const Vec3& pm, const Vec3& pn) const {
    switch (kind) {
      case KernelKind::laplace: {
        double r = (pm - pn).norm();
        return cxd(1.0 / (4.0 * std::numbers::pi * r), 0.0);
      }
      case KernelKind::helmholtz: {
        double r = (pm - pn).norm();
        return std::exp(cxd(0.0, -1.0) * wavenumber * r) / (4.0 * std::numbers::pi * r);
      }
      case KernelKind::custom:
        return custom(pm, pn);
    }
    return cxd(0.0, 0.0);
  }
};

inline KernelSpec laplace_kernel(double diagonal_shift = 1.0) {
  KernelSpec k;
  k.kind = KernelKind::laplace;
  k.diagonal_shift = diagonal_shift;
  return k;
}

inline KernelSpec helmholtz_kernel(cxd wavenumber, double diagonal_shift = 1.0) {
  KernelSpec k;
  k.kind = KernelKind::helmholtz;
  k.wavenumber = wavenumber;
  k.diagonal_shift = diagonal_shift;
  return k;
}

inline KernelSpec custom_kernel(std::function<cxd(const Vec3&, const Vec3&)> f, double diagonal_shift = 1.0) {
  KernelSpec k;
  k.kind = KernelKind::custom;
  k.custom = std::move(f);
  k.diagonal_shift = diagonal_shift;
  return k;
}

// Kernel sub-block in tree ordering for explicit row/column index lists.
inline Mat assemble_block(const KernelSpec& kernel, const ClusterTree& tree, IndexRange rows,
                          const std::vector<Index>& cols) {
  Mat Z(rows.size(), static_cast<Index>(cols.size()));
  for (Index j = 0; j < static_cast<Index>(cols.size()); ++j) {
    Index cj = cols[static_cast<size_t>(j)];
    const Vec3& pn = tree.point(cj);
    for (Index i = 0; i < rows.size(); ++i) {
      Index ri = rows.begin + i;
      cxd v = ri == cj ? cxd(kernel.diagonal_shift, 0.0) : kernel.entry(tree.point(ri), pn);
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw NonFiniteError("kernel entry (" + std::to_string(ri) + "," + std::to_string(cj) + ") is not finite");
      Z(i, j) = v;
    }
  }
  return Z;
}

inline Mat assemble_block(const KernelSpec& kernel, const ClusterTree& tree, IndexRange rows, IndexRange cols) {
  std::vector<Index> idx(static_cast<size_t>(cols.size()));
  std::iota(idx.begin(), idx.end(), cols.begin);
  return assemble_block(kernel, tree, rows, idx);
}

inline Mat assemble_block(const KernelSpec& kernel, const ClusterTree& tree, const std::vector<Index>& rows,
                          IndexRange cols) {
  Mat Z(static_cast<Index>(rows.size()), cols.size());
  for (Index j = 0; j < cols.size(); ++j) {
    Index cj = cols.begin + j;
    const Vec3& pn = tree.point(cj);
    for (Index i = 0; i < static_cast<Index>(rows.size()); ++i) {
      Index ri = rows[static_cast<size_t>(i)];
      cxd v = ri == cj ? cxd(kernel.diagonal_shift, 0.0) : kernel.entry(tree.point(ri), pn);
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw NonFiniteError("kernel entry (" + std::to_string(ri) + "," + std::to_string(cj) + ") is not finite");
      Z(i, j) = v;
    }
  }
  return Z;
}

// Full dense matrix in tree ordering, guarded against accidental huge builds.
inline Mat assemble_dense(const KernelSpec& kernel, const ClusterTree& tree, Index size_guard = 20000) {
  if (tree.n() > size_guard)
    throw SizeGuardError("assemble_dense: n=" + std::to_string(tree.n()) + " exceeds guard " + std::to_string(size_guard));
  return assemble_block(kernel, tree, IndexRange{0, tree.n()}, IndexRange{0, tree.n()});
}

}  // namespace h2lu

#endif
