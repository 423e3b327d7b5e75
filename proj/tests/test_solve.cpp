#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <random>

#include "h2lu/solve.hpp"
#include "h2lu/verify.hpp"

using namespace h2lu;

namespace {

Vec random_vec(Index n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = cxd(g(rng), g(rng));
  return v;
}

H2Matrix rod_h2(Index n, double eps, double eta = 1.0, Index leafsize = 25, double shift = 2.0) {
  auto tree = build_cluster_tree(rod_points(n), leafsize);
  auto blocks = build_block_tree(tree, eta);
  return build_h2(laplace_kernel(shift), blocks, eps);
}

bool same_bits(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(cxd) * static_cast<size_t>(a.size())) == 0;
}

bool same_bits(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), sizeof(cxd) * static_cast<size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("solve inverts the represented matrix to factorization accuracy", "[solve]") {
  H2Matrix A = rod_h2(200, 1e-10);
  FactorChain chain = factorize(A, 1e-12);
  Vec b = random_vec(200, 11);
  Vec x = solve(chain, b);
  Vec x_ref = Eigen::PartialPivLU<Mat>(A.dense_shadow()).solve(b);
  REQUIRE((x - x_ref).norm() < 1e-10 * x_ref.norm());
}

TEST_CASE("substitutions apply the inverses of the replayed factors", "[solve]") {
  H2Matrix A = rod_h2(128, 1e-8, 1.0, 16);
  FactorChain chain = factorize(A, 1e-10);
  ReplayFactors f = replay_factors(chain);
  Vec b = random_vec(128, 3);

  Vec y = forward_substitute(chain, b);
  Vec y_ref = Eigen::PartialPivLU<Mat>(f.L).solve(b);
  REQUIRE((y - y_ref).norm() < 1e-11 * y_ref.norm());

  Vec x = backward_substitute(chain, y);
  Vec x_ref = Eigen::PartialPivLU<Mat>(f.U).solve(y);
  REQUIRE((x - x_ref).norm() < 1e-11 * x_ref.norm());
}

TEST_CASE("helmholtz chain solves the complex system", "[solve]") {
  auto tree = build_cluster_tree(rod_points(200), 25);
  auto blocks = build_block_tree(tree, 1.0);
  H2Matrix A = build_h2(helmholtz_kernel(cxd(0.3, 0.0), 2.0), blocks, 1e-10);
  FactorChain chain = factorize(A, 1e-12);
  Vec b = random_vec(200, 5);
  Vec x = solve(chain, b);
  Vec x_ref = Eigen::PartialPivLU<Mat>(A.dense_shadow()).solve(b);
  REQUIRE((x - x_ref).norm() < 1e-9 * x_ref.norm());
}

TEST_CASE("solve agrees with the kernel-level dense oracle", "[solve]") {
  auto tree = build_cluster_tree(rod_points(300), 25);
  auto blocks = build_block_tree(tree, 1.0);
  H2Matrix A = build_h2(laplace_kernel(2.0), blocks, 1e-8);
  FactorChain chain = factorize(A, 1e-8);
  Vec b = random_vec(300, 23);
  Vec x = solve(chain, b);
  Vec x_ref = dense_oracle_solve(laplace_kernel(2.0), *tree, b);
  // both compression and elimination truncation contribute
  REQUIRE((x - x_ref).norm() < 100.0 * (1e-8 + 1e-8) * x_ref.norm());
}

TEST_CASE("solutions are linear in the right-hand side", "[solve]") {
  H2Matrix A = rod_h2(128, 1e-8, 1.0, 16);
  FactorChain chain = factorize(A, 1e-8);
  Vec a = random_vec(128, 1), c = random_vec(128, 2);
  const cxd alpha(0.7, -1.3), beta(-0.2, 0.5);
  Vec lhs = solve(chain, alpha * a + beta * c);
  Vec rhs = alpha * solve(chain, a) + beta * solve(chain, c);
  REQUIRE((lhs - rhs).norm() <= 1e-12 * (rhs.norm() + 1.0));
}

TEST_CASE("zero right-hand side solves to zero", "[solve]") {
  H2Matrix A = rod_h2(100, 1e-8);
  FactorChain chain = factorize(A, 1e-8);
  Vec x = solve(chain, Vec::Zero(100));
  REQUIRE(x.norm() == 0.0);
}

TEST_CASE("diagonal matrix solves exactly through the early-stopped chain", "[solve]") {
  auto zero_offdiag = custom_kernel([](const Vec3&, const Vec3&) { return cxd(0.0, 0.0); }, 2.0);
  auto tree = build_cluster_tree(rod_points(400), 25);
  auto blocks = build_block_tree(tree, 1.0);
  H2Matrix A = build_h2(zero_offdiag, blocks, 1e-8);
  FactorChain chain = factorize(A, 1e-8);
  Vec b = random_vec(400, 9);
  Vec x = solve(chain, b);
  REQUIRE((x - b / 2.0).norm() < 1e-14 * b.norm());
}

TEST_CASE("apply_inverse is solve under another name", "[solve]") {
  H2Matrix A = rod_h2(128, 1e-8, 1.0, 16);
  FactorChain chain = factorize(A, 1e-8);
  Vec b = random_vec(128, 42);
  REQUIRE(same_bits(apply_inverse(chain, b), solve(chain, b)));
}

TEST_CASE("in-place solve produces the same bits as the copying one", "[solve]") {
  H2Matrix A = rod_h2(128, 1e-8, 1.0, 16);
  FactorChain chain = factorize(A, 1e-8);
  Vec b = random_vec(128, 17);
  Vec x = solve(chain, b);
  Vec y = b;
  SolveWorkspace ws;
  solve_in_place(chain, y, ws);
  REQUIRE(same_bits(x, y));
}

TEST_CASE("solve validates the right-hand side", "[solve]") {
  H2Matrix A = rod_h2(100, 1e-8);
  FactorChain chain = factorize(A, 1e-8);
  REQUIRE_THROWS_AS(solve(chain, random_vec(99, 1)), InvalidInputError);
  Vec bad = random_vec(100, 1);
  bad[3] = cxd(std::numeric_limits<double>::quiet_NaN(), 0.0);
  REQUIRE_THROWS_AS(solve(chain, bad), NonFiniteError);
}

TEST_CASE("solving leaves the chain untouched", "[solve]") {
  H2Matrix A = rod_h2(128, 1e-8, 1.0, 16);
  FactorChain chain = factorize(A, 1e-8);
  FactorChain snapshot = chain;
  for (int s = 0; s < 3; ++s) solve(chain, random_vec(128, static_cast<unsigned>(s)));
  REQUIRE(chain.levels.size() == snapshot.levels.size());
  for (size_t l = 0; l < chain.levels.size(); ++l) {
    REQUIRE(chain.levels[l].perm.src == snapshot.levels[l].perm.src);
    for (size_t r = 0; r < chain.levels[l].recs.size(); ++r) {
      REQUIRE(same_bits(chain.levels[l].recs[r].Qtilde, snapshot.levels[l].recs[r].Qtilde));
      REQUIRE(same_bits(chain.levels[l].recs[r].L11, snapshot.levels[l].recs[r].L11));
      REQUIRE(same_bits(chain.levels[l].recs[r].U11, snapshot.levels[l].recs[r].U11));
      for (size_t q = 0; q < chain.levels[l].recs[r].Lbar.size(); ++q)
        REQUIRE(same_bits(chain.levels[l].recs[r].Lbar[q].M, snapshot.levels[l].recs[r].Lbar[q].M));
      for (size_t q = 0; q < chain.levels[l].recs[r].Ubar.size(); ++q)
        REQUIRE(same_bits(chain.levels[l].recs[r].Ubar[q].M, snapshot.levels[l].recs[r].Ubar[q].M));
    }
  }
  REQUIRE(same_bits(chain.root_l, snapshot.root_l));
  REQUIRE(same_bits(chain.root_u, snapshot.root_u));
}
