#ifndef H2LU_BENCH_HPP
#define H2LU_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "h2lu/solve.hpp"
#include "h2lu/verify.hpp"

// End-to-end measurement of build / factorize / solve on the synthetic
// geometries, plus the little bit of statistics needed to check complexity
// claims: a least-squares slope in log-log coordinates.

namespace h2lu {

struct RunMetrics {
  std::string geometry;
  Index n = 0;
  int depth = 0;
  Index leafsize = 0;
  double eta = 0.0;
  double eps_h2 = 0.0;
  double eps_fill_in = 0.0;
  int csp = 0;  // max blocks per cluster row over all levels
  Index rank_max = 0;
  Index root_size = 0;
  double build_seconds = 0.0;
  double factor_seconds = 0.0;
  double solve_seconds = 0.0;  // median over repeats
  double residual = 0.0;       // ||Ax-b|| / ||b|| through the compressed operator
  double error_vs_true = 0.0;  // against the manufactured solution
  size_t mem_h2_bytes = 0;
  size_t mem_chain_bytes = 0;
};

struct BenchConfig {
  Index leafsize = 25;
  double eta = 1.0;
  double eps_h2 = 1e-6;
  double eps_fill_in = 1e-6;
  int solve_reps = 3;
  unsigned seed = 1234;
  // Evict the factorization from the CPU caches before every timed solve.
  // Slope comparisons across sizes need all runs in the same memory regime:
  // warm-cache timing hands small problems an LLC subsidy that shows up as a
  // spurious superlinear slope once the chain outgrows the cache.
  bool cold_cache = false;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void evict_caches() {
  static std::vector<char> buf(size_t(64) << 20);
  for (size_t i = 0; i < buf.size(); i += 64) ++buf[i];
}

}  // namespace detail

inline PointCloud points_for(const std::string& geometry, Index n) {
  if (geometry == "rod") return rod_points(n);
  if (geometry == "slab") return slab_points(n);
  if (geometry == "cube") return cube_points(n);
  throw InvalidInputError("points_for: unknown geometry '" + geometry + "' (rod, slab, cube)");
}

inline RunMetrics bench_run(const std::string& geometry, const PointCloud& pts, const KernelSpec& kernel,
                            const BenchConfig& cfg = {}) {
  RunMetrics m;
  m.geometry = geometry;
  m.n = static_cast<Index>(pts.size());
  m.leafsize = cfg.leafsize;
  m.eta = cfg.eta;
  m.eps_h2 = cfg.eps_h2;
  m.eps_fill_in = cfg.eps_fill_in;

  auto t0 = std::chrono::steady_clock::now();
  auto tree = build_cluster_tree(pts, cfg.leafsize);
  auto blocks = build_block_tree(tree, cfg.eta);
  H2Matrix A = build_h2(kernel, blocks, cfg.eps_h2);
  m.build_seconds = detail::seconds_since(t0);

  m.depth = tree->depth();
  m.csp = blocks->csp();
  m.mem_h2_bytes = A.storage_bytes();
  for (Index k : A.rank_per_level_max()) m.rank_max = std::max(m.rank_max, k);

  t0 = std::chrono::steady_clock::now();
  FactorChain chain = factorize(A, cfg.eps_fill_in);
  m.factor_seconds = detail::seconds_since(t0);
  m.mem_chain_bytes = chain.storage_bytes();
  m.root_size = chain.root_size;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> g;
  Vec x_true(m.n);
  for (Index i = 0; i < m.n; ++i) x_true[i] = cxd(g(rng), g(rng));
  Vec b = h2_matvec(A, x_true);

  Vec x;
  std::vector<double> times;
  for (int rep = 0; rep < std::max(1, cfg.solve_reps); ++rep) {
    if (cfg.cold_cache) detail::evict_caches();
    t0 = std::chrono::steady_clock::now();
    x = solve(chain, b);
    times.push_back(detail::seconds_since(t0));
  }
  std::sort(times.begin(), times.end());
  m.solve_seconds = times[times.size() / 2];

  m.residual = relative_residual(A, x, b);
  m.error_vs_true = (x - x_true).norm() / x_true.norm();
  return m;
}

inline std::vector<RunMetrics> scaling_sweep(const std::string& geometry, const std::vector<Index>& sizes,
                                             const KernelSpec& kernel, const BenchConfig& cfg = {}) {
  std::vector<RunMetrics> out;
  out.reserve(sizes.size());
  for (Index n : sizes) out.push_back(bench_run(geometry, points_for(geometry, n), kernel, cfg));
  return out;
}

// Least-squares line through (log x, log y). Not meaningful (ok = false) with
// fewer than two points, non-positive data, or all x identical.
struct LoglogFit {
  double slope = 0.0;
  double intercept = 0.0;  // fit is log y = slope * log x + intercept
  bool ok = false;
};

inline LoglogFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
  LoglogFit fit;
  if (xs.size() != ys.size() || xs.size() < 2) return fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) return fit;
    double lx = std::log(xs[i]), ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double var = sxx - sx * sx / m;
  if (!(var > 0.0)) return fit;
  fit.slope = (sxy - sx * sy / m) / var;
  fit.intercept = (sy - fit.slope * sx) / m;
  fit.ok = true;
  return fit;
}

inline void write_csv(std::ostream& os, const std::vector<RunMetrics>& runs) {
  os << "geometry,n,depth,leafsize,eta,eps_h2,eps_fill_in,csp,rank_max,root_size,"
        "build_seconds,factor_seconds,solve_seconds,residual,error_vs_true,mem_h2_bytes,mem_chain_bytes\n";
  os << std::setprecision(17);
  for (const RunMetrics& m : runs)
    os << m.geometry << ',' << m.n << ',' << m.depth << ',' << m.leafsize << ',' << m.eta << ',' << m.eps_h2 << ','
       << m.eps_fill_in << ',' << m.csp << ',' << m.rank_max << ',' << m.root_size << ',' << m.build_seconds << ','
       << m.factor_seconds << ',' << m.solve_seconds << ',' << m.residual << ',' << m.error_vs_true << ','
       << m.mem_h2_bytes << ',' << m.mem_chain_bytes << '\n';
}

inline nlohmann::json to_json(const RunMetrics& m) {
  return nlohmann::json{{"geometry", m.geometry},
                        {"n", m.n},
                        {"depth", m.depth},
                        {"leafsize", m.leafsize},
                        {"eta", m.eta},
                        {"eps_h2", m.eps_h2},
                        {"eps_fill_in", m.eps_fill_in},
                        {"csp", m.csp},
                        {"rank_max", m.rank_max},
                        {"root_size", m.root_size},
                        {"build_seconds", m.build_seconds},
                        {"factor_seconds", m.factor_seconds},
                        {"solve_seconds", m.solve_seconds},
                        {"residual", m.residual},
                        {"error_vs_true", m.error_vs_true},
                        {"mem_h2_bytes", m.mem_h2_bytes},
                        {"mem_chain_bytes", m.mem_chain_bytes}};
}

inline void write_json_lines(std::ostream& os, const std::vector<RunMetrics>& runs) {
  for (const RunMetrics& m : runs) os << to_json(m).dump() << '\n';
}

}  // namespace h2lu

#endif
