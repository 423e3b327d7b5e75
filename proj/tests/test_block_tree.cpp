#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "h2lu/block_tree.hpp"

using namespace h2lu;

namespace {

Cluster box_cluster(Vec3 lo, Vec3 hi) {
  Cluster c;
  c.bbox.lo = lo;
  c.bbox.hi = hi;
  return c;
}

// Every matrix entry must be covered by exactly one block of the partition.
void check_partition(const BlockClusterTree& blocks) {
  const ClusterTree& tree = blocks.tree();
  Index n = tree.n();
  Eigen::MatrixXi cover = Eigen::MatrixXi::Zero(n, n);
  auto mark = [&](const BlockPair& p) {
    const Cluster& t = tree.cluster(p.row);
    const Cluster& s = tree.cluster(p.col);
    cover.block(t.begin, s.begin, t.size(), s.size()).array() += 1;
  };
  for (int l = 0; l <= tree.depth(); ++l)
    for (const auto& p : blocks.admissible(l)) mark(p);
  for (const auto& p : blocks.inadmissible_leaves()) mark(p);
  REQUIRE(cover.minCoeff() == 1);
  REQUIRE(cover.maxCoeff() == 1);
}

double admissible_area(const BlockClusterTree& blocks) {
  const ClusterTree& tree = blocks.tree();
  double area = 0;
  for (int l = 0; l <= tree.depth(); ++l)
    for (const auto& p : blocks.admissible(l))
      area += static_cast<double>(tree.cluster(p.row).size()) * static_cast<double>(tree.cluster(p.col).size());
  return area;
}

}  // namespace

TEST_CASE("admissibility on separated and touching boxes", "[block_tree]") {
  Cluster a = box_cluster({0, 0, 0}, {1, 1, 1});
  Cluster b = box_cluster({4, 0, 0}, {5, 1, 1});  // distance 3, diameters sqrt(3)
  REQUIRE(is_admissible(a, b, 1.0));
  REQUIRE(is_admissible(b, a, 1.0));

  Cluster c = box_cluster({1, 0, 0}, {2, 1, 1});  // touching: distance 0
  REQUIRE_FALSE(is_admissible(a, c, 1.0));

  // diameter 2 boxes at distance 2: strict inequality fails at eta = 1
  Cluster d = box_cluster({0, 0, 0}, {2, 0, 0});
  Cluster e = box_cluster({4, 0, 0}, {6, 0, 0});
  REQUIRE_FALSE(is_admissible(d, e, 1.0));
  REQUIRE(is_admissible(d, e, 1.0 + 1e-9));
}

TEST_CASE("single leaf tree yields one inadmissible block", "[block_tree]") {
  auto tree = build_cluster_tree(rod_points(20), 25);
  auto blocks = build_block_tree(tree, 1.0);
  REQUIRE(blocks->inadmissible_leaves().size() == 1);
  REQUIRE(blocks->num_admissible() == 0);
  REQUIRE(blocks->l0() == -1);
  check_partition(*blocks);
}

TEST_CASE("two well separated clouds give diagonal dense and off-diagonal admissible", "[block_tree]") {
  PointCloud pts;
  for (Index i = 0; i < 20; ++i) pts.emplace_back(0.05 * i, 0, 0);
  for (Index i = 0; i < 20; ++i) pts.emplace_back(100.0 + 0.05 * i, 0, 0);
  auto tree = build_cluster_tree(pts, 25);
  auto blocks = build_block_tree(tree, 1.0);
  REQUIRE(tree->depth() == 1);
  REQUIRE(blocks->inadmissible_leaves().size() == 2);
  REQUIRE(blocks->admissible(1).size() == 2);
  REQUIRE(blocks->l0() == 1);
  check_partition(*blocks);
}

TEST_CASE("rod partition covers the matrix exactly once", "[block_tree]") {
  auto tree = build_cluster_tree(rod_points(400), 25);
  auto blocks = build_block_tree(tree, 1.0);
  check_partition(*blocks);
  REQUIRE(blocks->num_admissible() > 0);
  REQUIRE(blocks->csp() >= 1);
  REQUIRE(blocks->l0() >= 1);

  // blocks pair clusters of the same level only
  for (int l = 0; l <= tree->depth(); ++l)
    for (const auto& p : blocks->admissible(l)) {
      REQUIRE(tree->cluster(p.row).level == l);
      REQUIRE(tree->cluster(p.col).level == l);
    }
}

TEST_CASE("admissible coverage grows with eta", "[block_tree]") {
  auto tree = build_cluster_tree(rod_points(400), 25);
  double prev = -1.0;
  for (double eta : {0.5, 1.0, 2.0}) {
    auto blocks = build_block_tree(tree, eta);
    check_partition(*blocks);
    double area = admissible_area(*blocks);
    REQUIRE(area >= prev);
    prev = area;
  }
}

TEST_CASE("random cloud partitions stay exact for several etas", "[block_tree]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  PointCloud pts;
  for (Index i = 0; i < 257; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  auto tree = build_cluster_tree(pts, 16);
  for (double eta : {0.7, 1.0, 1.9}) check_partition(*build_block_tree(tree, eta));
}

TEST_CASE("csp per level is a max over row clusters", "[block_tree]") {
  auto tree = build_cluster_tree(rod_points(200), 25);
  auto blocks = build_block_tree(tree, 1.0);
  int depth = tree->depth();
  // leaf level: a middle cluster touches neighbours at distance <= 2 plus
  // admissible partners at distance 3..7, never more than 12 blocks in 1-D
  REQUIRE(blocks->csp(depth) >= 5);
  REQUIRE(blocks->csp(depth) <= 15);
}
