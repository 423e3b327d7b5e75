// Minimal library walkthrough: compress a kernel matrix over a point cloud,
// factorize it with a chosen fill-in tolerance, solve a system, and check the
// residual against the compressed operator.

#include <cstdio>

#include "h2lu/solve.hpp"
#include "h2lu/verify.hpp"

using namespace h2lu;

int main() {
  const Index n = 2000;
  auto tree = build_cluster_tree(cube_points(n), 32);
  auto blocks = build_block_tree(tree, 1.0);  // eta = 1: strict admissibility
  H2Matrix A = build_h2(laplace_kernel(2.0), blocks, 1e-6);

  // The fill-in tolerance is the accuracy knob: tighten it and the solve
  // tightens with it, at the price of larger ranks in the factors.
  FactorChain chain = factorize(A, 1e-8);

  Vec x_true = Vec::Random(n);
  Vec b = h2_matvec(A, x_true);
  Vec x = solve(chain, b);

  std::printf("n=%lld depth=%d rank<=%lld | factor %.1f MiB | residual %.2e | error vs true %.2e\n",
              static_cast<long long>(n), tree->depth(),
              static_cast<long long>([&] {
                Index k = 0;
                for (Index r : A.rank_per_level_max()) k = std::max(k, r);
                return k;
              }()),
              static_cast<double>(chain.storage_bytes()) / (1 << 20), relative_residual(A, x, b),
              (x - x_true).norm() / x_true.norm());
  return 0;
}
