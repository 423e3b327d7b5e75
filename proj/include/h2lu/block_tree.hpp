#ifndef H2LU_BLOCK_TREE_HPP
#define H2LU_BLOCK_TREE_HPP

#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "h2lu/cluster_tree.hpp"
#include "h2lu/types.hpp"

namespace h2lu {

// Strict two-sided admissibility on bounding boxes.
inline bool is_admissible(const Cluster& t, const Cluster& s, double eta) {
  double diam = std::max(t.bbox.diameter(), s.bbox.diameter());
  return diam < eta * box_distance(t.bbox, s.bbox);
}

struct BlockPair {
  int row = -1;
  int col = -1;
};

// Block partition of the matrix induced by the cluster tree. The recursion
// descends through inadmissible non-leaf pairs ("split" pairs); it stops at
// admissible pairs (low-rank blocks) or at inadmissible leaf pairs (dense
// blocks). Split pairs at level l are exactly the positions that turn into
// dense blocks when the factorization merges level l+1 into level l.
class BlockClusterTree {
 public:
  BlockClusterTree(std::shared_ptr<const ClusterTree> tree, double eta) : tree_(std::move(tree)), eta_(eta) {
    const int depth = tree_->depth();
    admissible_.resize(static_cast<size_t>(depth) + 1);
    split_.resize(static_cast<size_t>(depth) + 1);

    std::vector<BlockPair> stack{{0, 0}};
    while (!stack.empty()) {
      BlockPair p = stack.back();
      stack.pop_back();
      const Cluster& t = tree_->cluster(p.row);
      const Cluster& s = tree_->cluster(p.col);
      if (is_admissible(t, s, eta_)) {
        admissible_[static_cast<size_t>(t.level)].push_back(p);
      } else if (t.is_leaf()) {
        inadmissible_leaf_.push_back(p);
      } else {
        split_[static_cast<size_t>(t.level)].push_back(p);
        for (int a = 1; a >= 0; --a)
          for (int b = 1; b >= 0; --b) stack.push_back({t.children[a], s.children[b]});
      }
    }
    for (auto& v : admissible_) std::sort(v.begin(), v.end(), pair_less);
    for (auto& v : split_) std::sort(v.begin(), v.end(), pair_less);
    std::sort(inadmissible_leaf_.begin(), inadmissible_leaf_.end(), pair_less);

    l0_ = -1;
    for (int l = 0; l <= depth; ++l)
      if (!admissible_[static_cast<size_t>(l)].empty()) {
        l0_ = l;
        break;
      }

    csp_per_level_.assign(static_cast<size_t>(depth) + 1, 0);
    for (int l = 0; l <= depth; ++l) {
      std::map<int, int> per_row;
      for (const auto& p : admissible_[static_cast<size_t>(l)]) ++per_row[p.row];
      for (const auto& p : split_[static_cast<size_t>(l)]) ++per_row[p.row];
      if (l == depth)
        for (const auto& p : inadmissible_leaf_) ++per_row[p.row];
      for (const auto& [row, cnt] : per_row) csp_per_level_[static_cast<size_t>(l)] = std::max(csp_per_level_[static_cast<size_t>(l)], cnt);
    }
  }

  const ClusterTree& tree() const { return *tree_; }
  std::shared_ptr<const ClusterTree> tree_ptr() const { return tree_; }
  double eta() const { return eta_; }

  const std::vector<BlockPair>& admissible(int level) const { return admissible_[static_cast<size_t>(level)]; }
  const std::vector<BlockPair>& split(int level) const { return split_[static_cast<size_t>(level)]; }
  const std::vector<BlockPair>& inadmissible_leaves() const { return inadmissible_leaf_; }

  Index num_admissible() const {
    Index c = 0;
    for (const auto& v : admissible_) c += static_cast<Index>(v.size());
    return c;
  }

  // Minimal (coarsest) level carrying admissible blocks; -1 when there is none.
  int l0() const { return l0_; }

  int csp(int level) const { return csp_per_level_[static_cast<size_t>(level)]; }
  int csp() const {
    int m = 0;
    for (int c : csp_per_level_) m = std::max(m, c);
    return m;
  }

 private:
  static bool pair_less(const BlockPair& a, const BlockPair& b) {
    return a.row < b.row || (a.row == b.row && a.col < b.col);
  }

  std::shared_ptr<const ClusterTree> tree_;
  double eta_;
  std::vector<std::vector<BlockPair>> admissible_;
  std::vector<std::vector<BlockPair>> split_;
  std::vector<BlockPair> inadmissible_leaf_;
  std::vector<int> csp_per_level_;
  int l0_ = -1;
};

inline std::shared_ptr<const BlockClusterTree> build_block_tree(std::shared_ptr<const ClusterTree> tree, double eta) {
  if (eta <= 0.0) throw InvalidInputError("build_block_tree: eta must be positive");
  return std::make_shared<const BlockClusterTree>(std::move(tree), eta);
}

}  // namespace h2lu

#endif
