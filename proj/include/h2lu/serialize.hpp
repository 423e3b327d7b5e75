#ifndef H2LU_SERIALIZE_HPP
#define H2LU_SERIALIZE_HPP

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "h2lu/factorization.hpp"
#include "h2lu/h2_matrix.hpp"

// Binary snapshots of the three things worth writing to disk: a compressed
// matrix, a factorization, and a vector. Layout is raw little-endian fields
// behind a small header ("H2LU", version, payload kind). Cluster trees store
// only permutation, points and index ranges; bounding boxes and the block
// partition are recomputed on load, so a loaded matrix behaves exactly like a
// freshly built one.

namespace h2lu {

static_assert(std::endian::native == std::endian::little, "serialized format is little-endian");

namespace detail {

constexpr std::uint32_t kMagic = 0x554C3248;  // "H2LU"
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kKindH2 = 1;
constexpr std::uint32_t kKindChain = 2;
constexpr std::uint32_t kKindVector = 3;

// dimension cap so corrupted headers fail with a message instead of bad_alloc
constexpr std::int64_t kDimGuard = std::int64_t(1) << 27;

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw SerializationError("serialize: write failed");
}

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  put_bytes(os, &v, sizeof v);
}

inline void get_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) throw SerializationError("serialize: truncated input");
}

template <class T>
T get(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v;
  get_bytes(is, &v, sizeof v);
  return v;
}

inline std::int64_t get_count(std::istream& is, const char* what) {
  std::int64_t v = get<std::int64_t>(is);
  if (v < 0 || v > kDimGuard) throw SerializationError(std::string("serialize: implausible ") + what);
  return v;
}

inline void put_mat(std::ostream& os, const Mat& m) {
  put<std::int64_t>(os, m.rows());
  put<std::int64_t>(os, m.cols());
  if (m.size() > 0) put_bytes(os, m.data(), sizeof(cxd) * static_cast<size_t>(m.size()));
}

inline Mat get_mat(std::istream& is) {
  std::int64_t r = get_count(is, "matrix rows");
  std::int64_t c = get_count(is, "matrix cols");
  if (r > 0 && c > kDimGuard / r) throw SerializationError("serialize: implausible matrix size");
  Mat m(r, c);
  if (m.size() > 0) get_bytes(is, m.data(), sizeof(cxd) * static_cast<size_t>(m.size()));
  return m;
}

inline void put_vec(std::ostream& os, const Vec& v) {
  put<std::int64_t>(os, v.size());
  if (v.size() > 0) put_bytes(os, v.data(), sizeof(cxd) * static_cast<size_t>(v.size()));
}

inline Vec get_vec(std::istream& is) {
  std::int64_t n = get_count(is, "vector length");
  Vec v(n);
  if (n > 0) get_bytes(is, v.data(), sizeof(cxd) * static_cast<size_t>(n));
  return v;
}

inline void put_index_vec(std::ostream& os, const std::vector<Index>& v) {
  put<std::int64_t>(os, static_cast<std::int64_t>(v.size()));
  for (Index x : v) put<std::int64_t>(os, x);
}

inline std::vector<Index> get_index_vec(std::istream& is) {
  std::int64_t n = get_count(is, "index vector length");
  std::vector<Index> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<Index>(get<std::int64_t>(is));
  return v;
}

inline void put_header(std::ostream& os, std::uint32_t kind) {
  put<std::uint32_t>(os, kMagic);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, kind);
}

inline void get_header(std::istream& is, std::uint32_t expected_kind) {
  if (get<std::uint32_t>(is) != kMagic) throw SerializationError("serialize: bad magic, not an h2lu file");
  std::uint32_t ver = get<std::uint32_t>(is);
  if (ver != kVersion) throw SerializationError("serialize: unsupported version " + std::to_string(ver));
  std::uint32_t kind = get<std::uint32_t>(is);
  if (kind != expected_kind)
    throw SerializationError("serialize: file holds payload kind " + std::to_string(kind) + ", expected " +
                             std::to_string(expected_kind));
}

inline void put_tree(std::ostream& os, const ClusterTree& t) {
  put<std::int64_t>(os, t.n());
  put<std::int32_t>(os, t.depth());
  put<std::int64_t>(os, t.leafsize());
  put_index_vec(os, t.perm());
  for (const Vec3& p : t.points())
    for (int a = 0; a < 3; ++a) put<double>(os, p[a]);
  for (int id = 0; id < t.num_clusters(); ++id) {
    put<std::int64_t>(os, t.cluster(id).begin);
    put<std::int64_t>(os, t.cluster(id).end);
  }
}

inline std::shared_ptr<const ClusterTree> get_tree(std::istream& is) {
  const Index n = static_cast<Index>(get_count(is, "point count"));
  const std::int32_t depth = get<std::int32_t>(is);
  const Index leafsize = static_cast<Index>(get_count(is, "leafsize"));
  if (n < 1 || leafsize < 1 || depth < 0 || depth > 48) throw SerializationError("serialize: malformed tree header");

  std::vector<Index> perm = get_index_vec(is);
  if (static_cast<Index>(perm.size()) != n) throw SerializationError("serialize: permutation length mismatch");
  std::vector<char> seen(static_cast<size_t>(n), 0);
  for (Index p : perm) {
    if (p < 0 || p >= n || seen[static_cast<size_t>(p)]) throw SerializationError("serialize: perm is not a permutation");
    seen[static_cast<size_t>(p)] = 1;
  }

  PointCloud pts(static_cast<size_t>(n));
  for (auto& p : pts)
    for (int a = 0; a < 3; ++a) p[a] = get<double>(is);

  const int num_nodes = (2 << depth) - 1;
  std::vector<Cluster> clusters(static_cast<size_t>(num_nodes));
  std::vector<Index> ident(static_cast<size_t>(n));
  std::iota(ident.begin(), ident.end(), Index(0));
  int level = 0;
  for (int id = 0; id < num_nodes; ++id) {
    if (id >= (2 << level) - 1) ++level;
    Cluster& c = clusters[static_cast<size_t>(id)];
    c.id = id;
    c.level = level;
    c.parent = id == 0 ? -1 : (id - 1) / 2;
    if (level < depth) {
      c.children[0] = 2 * id + 1;
      c.children[1] = 2 * id + 2;
    }
    c.begin = static_cast<Index>(get<std::int64_t>(is));
    c.end = static_cast<Index>(get<std::int64_t>(is));
    if (c.begin < 0 || c.begin > c.end || c.end > n) throw SerializationError("serialize: cluster range out of bounds");
    c.bbox = BoundingBox::of(pts, ident, c.begin, c.end);  // points are already in tree order
  }
  if (clusters[0].begin != 0 || clusters[0].end != n) throw SerializationError("serialize: root range mismatch");
  for (const Cluster& c : clusters)
    if (!c.is_leaf()) {
      const Cluster& c1 = clusters[static_cast<size_t>(c.children[0])];
      const Cluster& c2 = clusters[static_cast<size_t>(c.children[1])];
      if (c1.begin != c.begin || c1.end != c2.begin || c2.end != c.end)
        throw SerializationError("serialize: children do not partition their parent");
    }

  return std::make_shared<const ClusterTree>(std::move(pts), std::move(perm), std::move(clusters), depth, leafsize);
}

}  // namespace detail

inline void save_h2(std::ostream& os, const H2Matrix& A) {
  detail::put_header(os, detail::kKindH2);
  detail::put_tree(os, *A.tree);
  detail::put<double>(os, A.blocks->eta());
  detail::put<double>(os, A.eps_h2);
  detail::put<std::int64_t>(os, A.shadow_guard);
  for (const ClusterBasis& b : A.bases) detail::put_mat(os, b.M);
  for (int l = 0; l <= A.depth(); ++l)
    for (const Mat& S : A.couplings[static_cast<size_t>(l)]) detail::put_mat(os, S);
  for (const Mat& D : A.dense_blocks) detail::put_mat(os, D);
}

inline H2Matrix load_h2(std::istream& is) {
  detail::get_header(is, detail::kKindH2);
  auto tree = detail::get_tree(is);
  double eta = detail::get<double>(is);
  if (!(eta > 0.0)) throw SerializationError("serialize: eta must be positive");

  H2Matrix A;
  A.tree = tree;
  A.blocks = build_block_tree(tree, eta);
  A.eps_h2 = detail::get<double>(is);
  A.shadow_guard = static_cast<Index>(detail::get_count(is, "shadow guard"));

  A.bases.resize(static_cast<size_t>(tree->num_clusters()));
  for (auto& b : A.bases) b.M = detail::get_mat(is);
  for (int id = 0; id < tree->num_clusters(); ++id) {  // children live at larger ids, so check after reading all
    const Cluster& c = tree->cluster(id);
    Index expect = c.is_leaf() ? c.size()
                               : A.bases[static_cast<size_t>(c.children[0])].rank() +
                                     A.bases[static_cast<size_t>(c.children[1])].rank();
    if (A.bases[static_cast<size_t>(id)].M.rows() != expect)
      throw SerializationError("serialize: basis rows inconsistent with tree");
  }

  A.couplings.resize(static_cast<size_t>(tree->depth()) + 1);
  for (int l = 0; l <= tree->depth(); ++l) {
    const auto& adm = A.blocks->admissible(l);
    auto& row = A.couplings[static_cast<size_t>(l)];
    row.reserve(adm.size());
    for (const BlockPair& p : adm) {
      Mat S = detail::get_mat(is);
      if (S.rows() != A.bases[static_cast<size_t>(p.row)].rank() || S.cols() != A.bases[static_cast<size_t>(p.col)].rank())
        throw SerializationError("serialize: coupling dims inconsistent with basis ranks");
      row.push_back(std::move(S));
    }
  }

  const auto& leaves = A.blocks->inadmissible_leaves();
  A.dense_blocks.reserve(leaves.size());
  for (const BlockPair& p : leaves) {
    Mat D = detail::get_mat(is);
    if (D.rows() != tree->cluster(p.row).size() || D.cols() != tree->cluster(p.col).size())
      throw SerializationError("serialize: dense block dims inconsistent with tree");
    A.dense_blocks.push_back(std::move(D));
  }
  return A;
}

inline void save_chain(std::ostream& os, const FactorChain& chain) {
  detail::put_header(os, detail::kKindChain);
  detail::put_tree(os, *chain.tree);
  detail::put<std::int64_t>(os, chain.n);
  detail::put<std::int32_t>(os, chain.stop_level);
  detail::put<double>(os, chain.eps_fill_in);

  detail::put<std::int64_t>(os, static_cast<std::int64_t>(chain.levels.size()));
  for (const LevelBlock& lb : chain.levels) {
    detail::put<std::int32_t>(os, lb.level);
    detail::put<std::int64_t>(os, static_cast<std::int64_t>(lb.recs.size()));
    for (const EliminationRecord& r : lb.recs) {
      detail::put<std::int32_t>(os, r.cluster);
      detail::put<std::int32_t>(os, r.level);
      for (Index f : {r.pos, r.bsize, r.eliminated, r.rank_before, r.rank_after, r.fill_targets})
        detail::put<std::int64_t>(os, f);
      detail::put_mat(os, r.Qtilde);
      detail::put_mat(os, r.L11);
      detail::put_mat(os, r.U11);
      for (const auto* side : {&r.Lbar, &r.Ubar}) {
        detail::put<std::int64_t>(os, static_cast<std::int64_t>(side->size()));
        for (const auto& b : *side) {
          detail::put<std::int64_t>(os, b.pos);
          detail::put_mat(os, b.M);
        }
      }
    }
    detail::put<std::int32_t>(os, lb.perm.level);
    detail::put_index_vec(os, lb.perm.src);
    detail::put<std::int64_t>(os, lb.perm.active_after);
    detail::put<std::int32_t>(os, lb.diag.level);
    for (Index f : {lb.diag.rank_sum_before, lb.diag.rank_sum_after, lb.diag.eliminated, lb.diag.ledger_blocks})
      detail::put<std::int64_t>(os, f);
    detail::put<std::uint64_t>(os, lb.diag.chain_bytes);
  }

  detail::put_mat(os, chain.root_l);
  detail::put_mat(os, chain.root_u);
  detail::put<std::int64_t>(os, chain.root_size);
}

inline FactorChain load_chain(std::istream& is) {
  detail::get_header(is, detail::kKindChain);
  FactorChain chain;
  chain.tree = detail::get_tree(is);
  chain.n = static_cast<Index>(detail::get_count(is, "matrix size"));
  if (chain.n != chain.tree->n()) throw SerializationError("serialize: chain size disagrees with its tree");
  chain.stop_level = detail::get<std::int32_t>(is);
  chain.eps_fill_in = detail::get<double>(is);

  std::int64_t num_levels = detail::get_count(is, "level count");
  if (num_levels > chain.tree->depth() + 1) throw SerializationError("serialize: more level blocks than tree levels");
  chain.levels.resize(static_cast<size_t>(num_levels));
  for (auto& lb : chain.levels) {
    lb.level = detail::get<std::int32_t>(is);
    std::int64_t num_recs = detail::get_count(is, "record count");
    lb.recs.resize(static_cast<size_t>(num_recs));
    for (auto& r : lb.recs) {
      r.cluster = detail::get<std::int32_t>(is);
      r.level = detail::get<std::int32_t>(is);
      for (Index* f : {&r.pos, &r.bsize, &r.eliminated, &r.rank_before, &r.rank_after, &r.fill_targets})
        *f = static_cast<Index>(detail::get<std::int64_t>(is));
      r.Qtilde = detail::get_mat(is);
      r.L11 = detail::get_mat(is);
      r.U11 = detail::get_mat(is);
      if (r.Qtilde.rows() != r.Qtilde.cols() || r.Qtilde.rows() != r.bsize || r.L11.rows() != r.eliminated ||
          r.L11.rows() != r.L11.cols() || r.U11.rows() != r.U11.cols() || r.U11.rows() != r.eliminated ||
          r.eliminated > r.bsize || r.eliminated < 0)
        throw SerializationError("serialize: elimination record dims inconsistent");
      for (auto* side : {&r.Lbar, &r.Ubar}) {
        std::int64_t cnt = detail::get_count(is, "off-diagonal block count");
        side->resize(static_cast<size_t>(cnt));
        for (auto& b : *side) {
          b.pos = static_cast<Index>(detail::get<std::int64_t>(is));
          b.M = detail::get_mat(is);
          if (b.pos < 0 || b.pos >= chain.n) throw SerializationError("serialize: off-diagonal block out of range");
        }
      }
    }
    lb.perm.level = detail::get<std::int32_t>(is);
    lb.perm.src = detail::get_index_vec(is);
    lb.perm.active_after = static_cast<Index>(detail::get<std::int64_t>(is));
    for (Index s : lb.perm.src)
      if (s < 0 || s >= static_cast<Index>(lb.perm.src.size()))
        throw SerializationError("serialize: permutation entry out of range");
    lb.diag.level = detail::get<std::int32_t>(is);
    for (Index* f : {&lb.diag.rank_sum_before, &lb.diag.rank_sum_after, &lb.diag.eliminated, &lb.diag.ledger_blocks})
      *f = static_cast<Index>(detail::get<std::int64_t>(is));
    lb.diag.chain_bytes = detail::get<std::uint64_t>(is);
  }

  chain.root_l = detail::get_mat(is);
  chain.root_u = detail::get_mat(is);
  chain.root_size = static_cast<Index>(detail::get_count(is, "root size"));
  if (chain.root_l.rows() != chain.root_size || chain.root_l.cols() != chain.root_size ||
      chain.root_u.rows() != chain.root_size || chain.root_u.cols() != chain.root_size)
    throw SerializationError("serialize: root factor dims inconsistent");
  return chain;
}

inline void save_vector(std::ostream& os, const Vec& v) {
  detail::put_header(os, detail::kKindVector);
  detail::put_vec(os, v);
}

inline Vec load_vector(std::istream& is) {
  detail::get_header(is, detail::kKindVector);
  return detail::get_vec(is);
}

// file-path conveniences

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw SerializationError("serialize: cannot open " + path + " for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SerializationError("serialize: cannot open " + path);
  return is;
}

}  // namespace detail

inline void save_h2(const std::string& path, const H2Matrix& A) {
  auto os = detail::open_out(path);
  save_h2(os, A);
}

inline H2Matrix load_h2(const std::string& path) {
  auto is = detail::open_in(path);
  return load_h2(is);
}

inline void save_chain(const std::string& path, const FactorChain& chain) {
  auto os = detail::open_out(path);
  save_chain(os, chain);
}

inline FactorChain load_chain(const std::string& path) {
  auto is = detail::open_in(path);
  return load_chain(is);
}

inline void save_vector(const std::string& path, const Vec& v) {
  auto os = detail::open_out(path);
  save_vector(os, v);
}

inline Vec load_vector(const std::string& path) {
  auto is = detail::open_in(path);
  return load_vector(is);
}

}  // namespace h2lu

#endif
