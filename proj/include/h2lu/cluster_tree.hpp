#ifndef H2LU_CLUSTER_TREE_HPP
#define H2LU_CLUSTER_TREE_HPP

#include <algorithm>
#include <memory>
#include <numeric>
#include <vector>

#include "h2lu/geometry.hpp"
#include "h2lu/types.hpp"

namespace h2lu {

struct Cluster {
  int id = -1;
  int level = 0;
  int parent = -1;
  int children[2] = {-1, -1};
  Index begin = 0;  // index range in tree ordering
  Index end = 0;
  BoundingBox bbox;

  Index size() const { return end - begin; }
  bool is_leaf() const { return children[0] < 0; }
};

// Uniform-depth binary tree over a point cloud. Clusters are stored in heap
// order (root 0, children of i at 2i+1/2i+2), level l occupies ids
// [2^l-1, 2^(l+1)-2] left to right. Splits bisect the longest bbox axis at the
// median, so leaf sizes differ by at most one and every leaf sits at depth L.
class ClusterTree {
 public:
  ClusterTree(PointCloud pts, std::vector<Index> perm, std::vector<Cluster> clusters, int depth, Index leafsize)
      : points_(std::move(pts)),
        perm_(std::move(perm)),
        clusters_(std::move(clusters)),
        depth_(depth),
        leafsize_(leafsize) {}

  Index n() const { return static_cast<Index>(points_.size()); }
  int depth() const { return depth_; }
  Index leafsize() const { return leafsize_; }

  // Points in tree ordering; point(i) corresponds to matrix row/column i.
  const PointCloud& points() const { return points_; }
  const Vec3& point(Index i) const { return points_[static_cast<size_t>(i)]; }

  // perm()[tree_index] = original index.
  const std::vector<Index>& perm() const { return perm_; }

  const Cluster& cluster(int id) const { return clusters_[static_cast<size_t>(id)]; }
  int num_clusters() const { return static_cast<int>(clusters_.size()); }

  int level_begin(int level) const { return (1 << level) - 1; }
  int level_count(int level) const { return 1 << level; }

  std::vector<int> clusters_at(int level) const {
    std::vector<int> ids(static_cast<size_t>(level_count(level)));
    std::iota(ids.begin(), ids.end(), level_begin(level));
    return ids;
  }

 private:
  PointCloud points_;
  std::vector<Index> perm_;
  std::vector<Cluster> clusters_;
  int depth_;
  Index leafsize_;
};

inline std::shared_ptr<const ClusterTree> build_cluster_tree(const PointCloud& pts, Index leafsize) {
  if (pts.empty()) throw InvalidInputError("build_cluster_tree: empty point cloud");
  if (leafsize < 1) throw InvalidInputError("build_cluster_tree: leafsize must be >= 1");

  const Index n = static_cast<Index>(pts.size());
  int depth = 0;
  while ((n + (Index(1) << depth) - 1) / (Index(1) << depth) > leafsize) ++depth;

  std::vector<Index> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), Index(0));

  const int num_nodes = (2 << depth) - 1;
  std::vector<Cluster> clusters(static_cast<size_t>(num_nodes));

  struct Item {
    int id, level;
    Index begin, end;
  };
  std::vector<Item> stack{{0, 0, 0, n}};
  while (!stack.empty()) {
    Item it = stack.back();
    stack.pop_back();
    Cluster& c = clusters[static_cast<size_t>(it.id)];
    c.id = it.id;
    c.level = it.level;
    c.parent = it.id == 0 ? -1 : (it.id - 1) / 2;
    c.begin = it.begin;
    c.end = it.end;
    c.bbox = BoundingBox::of(pts, perm, it.begin, it.end);
    if (it.level == depth) continue;

    int ax = c.bbox.longest_axis();
    Index mid = it.begin + (it.end - it.begin + 1) / 2;
    std::nth_element(perm.begin() + it.begin, perm.begin() + mid, perm.begin() + it.end,
                     [&](Index a, Index b) {
                       double ca = pts[static_cast<size_t>(a)][ax], cb = pts[static_cast<size_t>(b)][ax];
                       return ca < cb || (ca == cb && a < b);
                     });
    c.children[0] = 2 * it.id + 1;
    c.children[1] = 2 * it.id + 2;
    stack.push_back({c.children[0], it.level + 1, it.begin, mid});
    stack.push_back({c.children[1], it.level + 1, mid, it.end});
  }

  PointCloud ordered(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) ordered[static_cast<size_t>(i)] = pts[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  return std::make_shared<const ClusterTree>(std::move(ordered), std::move(perm), std::move(clusters), depth, leafsize);
}

}  // namespace h2lu

#endif
