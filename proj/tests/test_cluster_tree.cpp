#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "h2lu/cluster_tree.hpp"

using namespace h2lu;

namespace {

PointCloud random_cloud(Index n, unsigned seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, scale);
  PointCloud pts;
  pts.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  return pts;
}

void check_invariants(const ClusterTree& tree) {
  const Index n = tree.n();

  // perm is a permutation
  std::set<Index> seen(tree.perm().begin(), tree.perm().end());
  REQUIRE(static_cast<Index>(seen.size()) == n);
  REQUIRE(*seen.begin() == 0);
  REQUIRE(*seen.rbegin() == n - 1);

  for (int id = 0; id < tree.num_clusters(); ++id) {
    const Cluster& c = tree.cluster(id);
    REQUIRE(c.begin <= c.end);  // empty clusters are legal at leafsize 1
    if (!c.is_leaf()) {
      const Cluster& c1 = tree.cluster(c.children[0]);
      const Cluster& c2 = tree.cluster(c.children[1]);
      REQUIRE(c1.begin == c.begin);
      REQUIRE(c1.end == c2.begin);
      REQUIRE(c2.end == c.end);
      REQUIRE(c1.parent == id);
      REQUIRE(c2.parent == id);
    } else {
      REQUIRE(c.level == tree.depth());
      REQUIRE(c.size() <= tree.leafsize());
    }
    // bbox contains its points
    for (Index i = c.begin; i < c.end; ++i) {
      const Vec3& p = tree.point(i);
      for (int ax = 0; ax < 3; ++ax) {
        REQUIRE(p[ax] >= c.bbox.lo[ax] - 1e-14);
        REQUIRE(p[ax] <= c.bbox.hi[ax] + 1e-14);
      }
    }
  }
}

}  // namespace

TEST_CASE("50 collinear points with leafsize 25 split once", "[cluster_tree]") {
  auto tree = build_cluster_tree(rod_points(50), 25);
  REQUIRE(tree->depth() == 1);
  REQUIRE(tree->cluster(1).size() == 25);
  REQUIRE(tree->cluster(2).size() == 25);
  // median split on x keeps the halves contiguous
  for (Index i = 0; i < 25; ++i) REQUIRE(tree->point(i)[0] < 25.0);
  for (Index i = 25; i < 50; ++i) REQUIRE(tree->point(i)[0] >= 25.0);
  check_invariants(*tree);
}

TEST_CASE("point count at leafsize gives single root leaf", "[cluster_tree]") {
  auto tree = build_cluster_tree(rod_points(25), 25);
  REQUIRE(tree->depth() == 0);
  REQUIRE(tree->num_clusters() == 1);
  REQUIRE(tree->cluster(0).is_leaf());
  REQUIRE(tree->cluster(0).size() == 25);
}

TEST_CASE("random cube cloud keeps every leaf within leafsize", "[cluster_tree]") {
  auto tree = build_cluster_tree(random_cloud(1000, 42), 25);
  check_invariants(*tree);
  int leaves = 0;
  for (int id = 0; id < tree->num_clusters(); ++id)
    if (tree->cluster(id).is_leaf()) {
      ++leaves;
      REQUIRE(tree->cluster(id).size() <= 25);
    }
  REQUIRE(leaves == tree->level_count(tree->depth()));
}

TEST_CASE("empty cloud is rejected", "[cluster_tree]") {
  REQUIRE_THROWS_AS(build_cluster_tree(PointCloud{}, 25), InvalidInputError);
}

TEST_CASE("tree build is deterministic", "[cluster_tree]") {
  auto pts = random_cloud(300, 7);
  auto a = build_cluster_tree(pts, 20);
  auto b = build_cluster_tree(pts, 20);
  REQUIRE(a->perm() == b->perm());
}

TEST_CASE("grid ties are split deterministically", "[cluster_tree]") {
  auto pts = slab_points(100);
  auto a = build_cluster_tree(pts, 10);
  auto b = build_cluster_tree(pts, 10);
  REQUIRE(a->perm() == b->perm());
  check_invariants(*a);
}

TEST_CASE("leafsize one with odd counts produces empty leaves safely", "[cluster_tree]") {
  // splitting a 1-point cluster gives an empty right child; the bbox of an
  // empty range must not touch the permutation
  auto tree = build_cluster_tree(rod_points(5), 1);
  check_invariants(*tree);
  bool saw_empty = false;
  for (int id = 0; id < tree->num_clusters(); ++id) {
    const Cluster& c = tree->cluster(id);
    if (c.size() == 0) {
      saw_empty = true;
      REQUIRE(c.bbox.diameter() == 0.0);
    }
  }
  REQUIRE(saw_empty);
}
