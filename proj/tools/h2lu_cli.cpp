// Command line front end: build a compressed matrix from a point cloud,
// factorize it, solve systems, and run scaling benchmarks. Vectors on disk are
// in the original point order; the tree permutation is applied on the way in
// and undone on the way out.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "h2lu/bench.hpp"
#include "h2lu/serialize.hpp"
#include "h2lu/solve.hpp"
#include "h2lu/verify.hpp"

using namespace h2lu;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

KernelSpec make_kernel(const std::string& name, double wavenumber, double shift) {
  if (name == "laplace") return laplace_kernel(shift);
  if (name == "helmholtz") return helmholtz_kernel(cxd(wavenumber, 0.0), shift);
  throw InvalidInputError("unknown kernel '" + name + "' (laplace, helmholtz)");
}

PointCloud load_cloud(const std::string& geometry, Index n, const std::string& points_path) {
  if (!points_path.empty()) {
    if (points_path.size() > 4 && points_path.substr(points_path.size() - 4) == ".bin")
      return load_points_bin(points_path);
    return load_points_csv(points_path);
  }
  if (n <= 0) throw InvalidInputError("either --points or --geometry with --n is required");
  return points_for(geometry, n);
}

Vec to_tree_order(const Vec& v, const std::vector<Index>& perm) {
  Vec out(v.size());
  for (Index i = 0; i < v.size(); ++i) out[i] = v[perm[static_cast<size_t>(i)]];
  return out;
}

Vec to_original_order(const Vec& v, const std::vector<Index>& perm) {
  Vec out(v.size());
  for (Index i = 0; i < v.size(); ++i) out[perm[static_cast<size_t>(i)]] = v[i];
  return out;
}

struct Options {
  std::string geometry = "rod";
  Index n = 0;
  std::string points_path;
  std::string kernel = "laplace";
  double wavenumber = 1.0;
  double shift = 1.0;
  Index leafsize = 25;
  double eta = 1.0;
  double eps_h2 = 1e-3;
  double eps_fill_in = 1e-5;
  std::optional<int> stop_level;
  unsigned seed = 1234;
  bool as_json = false;

  std::string in_path, out_path, chain_path, rhs_path, matrix_path, csv_path;
  std::vector<Index> sizes{400, 800, 1600};
  int solve_reps = 3;
  bool cold_cache = false;
};

void emit(const Options& opt, const json& j, const std::string& text) {
  if (opt.as_json)
    std::cout << j.dump(2) << '\n';
  else
    std::cout << text;
}

int run_build(const Options& opt) {
  PointCloud pts = load_cloud(opt.geometry, opt.n, opt.points_path);
  KernelSpec kernel = make_kernel(opt.kernel, opt.wavenumber, opt.shift);

  auto t0 = std::chrono::steady_clock::now();
  auto tree = build_cluster_tree(pts, opt.leafsize);
  auto blocks = build_block_tree(tree, opt.eta);
  H2Matrix A = build_h2(kernel, blocks, opt.eps_h2);
  double secs = seconds_since(t0);
  save_h2(opt.out_path, A);

  Index rank_max = 0;
  for (Index k : A.rank_per_level_max()) rank_max = std::max(rank_max, k);
  json j{{"n", A.n()},           {"depth", A.depth()},
         {"csp", blocks->csp()}, {"admissible_blocks", blocks->num_admissible()},
         {"rank_max", rank_max}, {"mem_bytes", A.storage_bytes()},
         {"seconds", secs},      {"out", opt.out_path}};
  char buf[256];
  std::snprintf(buf, sizeof buf, "built n=%lld depth=%d rank_max=%lld mem=%.1f MiB in %.2fs -> %s\n",
                static_cast<long long>(A.n()), A.depth(), static_cast<long long>(rank_max),
                static_cast<double>(A.storage_bytes()) / (1 << 20), secs, opt.out_path.c_str());
  emit(opt, j, buf);
  return 0;
}

int run_factor(const Options& opt) {
  H2Matrix A = load_h2(opt.in_path);
  auto t0 = std::chrono::steady_clock::now();
  FactorChain chain = factorize(A, opt.eps_fill_in, opt.stop_level);
  double secs = seconds_since(t0);
  save_chain(opt.out_path, chain);

  json levels = json::array();
  for (const LevelBlock& lb : chain.levels)
    levels.push_back(json{{"level", lb.diag.level},
                          {"eliminated", lb.diag.eliminated},
                          {"rank_sum_before", lb.diag.rank_sum_before},
                          {"rank_sum_after", lb.diag.rank_sum_after},
                          {"ledger_blocks", lb.diag.ledger_blocks},
                          {"chain_bytes", lb.diag.chain_bytes}});
  json j{{"n", chain.n},
         {"stop_level", chain.stop_level},
         {"root_size", chain.root_size},
         {"mem_bytes", chain.storage_bytes()},
         {"seconds", secs},
         {"levels", levels},
         {"out", opt.out_path}};

  std::string text;
  char buf[256];
  for (const LevelBlock& lb : chain.levels) {
    std::snprintf(buf, sizeof buf, "level %d: eliminated %lld of %lld unknowns, %lld fill blocks absorbed\n",
                  lb.diag.level, static_cast<long long>(lb.diag.eliminated),
                  static_cast<long long>(lb.diag.eliminated + lb.diag.rank_sum_after),
                  static_cast<long long>(lb.diag.ledger_blocks));
    text += buf;
  }
  std::snprintf(buf, sizeof buf, "factorized n=%lld root=%lld mem=%.1f MiB in %.2fs -> %s\n",
                static_cast<long long>(chain.n), static_cast<long long>(chain.root_size),
                static_cast<double>(chain.storage_bytes()) / (1 << 20), secs, opt.out_path.c_str());
  text += buf;
  emit(opt, j, text);
  return 0;
}

int run_solve(const Options& opt) {
  FactorChain chain = load_chain(opt.chain_path);
  Vec b_orig = load_vector(opt.rhs_path);
  if (b_orig.size() != chain.n)
    throw InvalidInputError("rhs length " + std::to_string(b_orig.size()) + " does not match the factorization size " +
                            std::to_string(chain.n));

  Vec b = to_tree_order(b_orig, chain.tree->perm());
  auto t0 = std::chrono::steady_clock::now();
  Vec x = solve(chain, b);
  double secs = seconds_since(t0);
  save_vector(opt.out_path, to_original_order(x, chain.tree->perm()));

  json j{{"n", chain.n}, {"seconds", secs}, {"out", opt.out_path}};
  std::string text;
  char buf[256];
  if (!opt.matrix_path.empty()) {
    double res = relative_residual(load_h2(opt.matrix_path), x, b);
    j["residual"] = res;
    std::snprintf(buf, sizeof buf, "relative residual %.3e\n", res);
    text += buf;
  }
  std::snprintf(buf, sizeof buf, "solved n=%lld in %.3fs -> %s\n", static_cast<long long>(chain.n), secs,
                opt.out_path.c_str());
  text += buf;
  emit(opt, j, text);
  return 0;
}

int run_rhs(const Options& opt) {
  if (opt.n <= 0) throw InvalidInputError("--n must be positive");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> g;
  Vec v(opt.n);
  for (Index i = 0; i < opt.n; ++i) v[i] = cxd(g(rng), g(rng));
  save_vector(opt.out_path, v);
  emit(opt, json{{"n", opt.n}, {"seed", opt.seed}, {"out", opt.out_path}},
       "wrote random vector of length " + std::to_string(opt.n) + " -> " + opt.out_path + "\n");
  return 0;
}

int run_bench(const Options& opt) {
  KernelSpec kernel = make_kernel(opt.kernel, opt.wavenumber, opt.shift);
  BenchConfig cfg;
  cfg.leafsize = opt.leafsize;
  cfg.eta = opt.eta;
  cfg.eps_h2 = opt.eps_h2;
  cfg.eps_fill_in = opt.eps_fill_in;
  cfg.solve_reps = opt.solve_reps;
  cfg.seed = opt.seed;
  cfg.cold_cache = opt.cold_cache;
  auto runs = scaling_sweep(opt.geometry, opt.sizes, kernel, cfg);

  if (!opt.csv_path.empty()) {
    std::ofstream os(opt.csv_path);
    if (!os) throw InvalidInputError("cannot open " + opt.csv_path + " for writing");
    write_csv(os, runs);
  }
  if (opt.as_json) {
    write_json_lines(std::cout, runs);
    return 0;
  }

  std::printf("%-6s %8s %6s %10s %10s %10s %12s %12s\n", "geom", "n", "csp", "build_s", "factor_s", "solve_s",
              "residual", "mem_MiB");
  std::vector<double> ns, fs, ss, ms;
  for (const RunMetrics& m : runs) {
    double mem = static_cast<double>(m.mem_h2_bytes + m.mem_chain_bytes);
    std::printf("%-6s %8lld %6d %10.3f %10.3f %10.4f %12.3e %12.1f\n", m.geometry.c_str(),
                static_cast<long long>(m.n), m.csp, m.build_seconds, m.factor_seconds, m.solve_seconds, m.residual,
                mem / (1 << 20));
    ns.push_back(static_cast<double>(m.n));
    fs.push_back(m.factor_seconds);
    ss.push_back(m.solve_seconds);
    ms.push_back(mem);
  }
  LoglogFit f = fit_loglog(ns, fs), s = fit_loglog(ns, ss), mm = fit_loglog(ns, ms);
  if (f.ok) std::printf("slope vs n: factor %.2f, solve %.2f, memory %.2f\n", f.slope, s.slope, mm.slope);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"accuracy-controlled direct solver for hierarchically compressed kernel matrices"};
  app.require_subcommand(1);
  Options opt;

  auto add_kernel_flags = [&](CLI::App* c) {
    c->add_option("--kernel", opt.kernel, "kernel: laplace or helmholtz")->capture_default_str();
    c->add_option("--wavenumber", opt.wavenumber, "helmholtz wavenumber")->capture_default_str();
    c->add_option("--shift", opt.shift, "diagonal shift added to the kernel matrix")->capture_default_str();
  };
  auto add_geometry_flags = [&](CLI::App* c) {
    c->add_option("--geometry", opt.geometry, "synthetic point cloud: rod, slab or cube")->capture_default_str();
    c->add_option("--n", opt.n, "number of points for --geometry");
    c->add_option("--points", opt.points_path, "point cloud file (.csv with x,y,z rows, or .bin)");
    c->add_option("--leafsize", opt.leafsize, "cluster tree leaf size")->capture_default_str();
    c->add_option("--eta", opt.eta, "admissibility parameter")->capture_default_str();
  };

  CLI::App* build = app.add_subcommand("build", "compress a kernel matrix and write it to disk");
  add_geometry_flags(build);
  add_kernel_flags(build);
  build->add_option("--eps-h2", opt.eps_h2, "compression tolerance")->capture_default_str();
  build->add_option("--out", opt.out_path, "output file")->required();

  CLI::App* factor = app.add_subcommand("factor", "factorize a compressed matrix");
  factor->add_option("--in", opt.in_path, "compressed matrix file")->required();
  factor->add_option("--eps-fill-in", opt.eps_fill_in, "fill-in truncation tolerance")->capture_default_str();
  factor->add_option("--stop-level", opt.stop_level, "coarsest level to eliminate before the dense root");
  factor->add_option("--out", opt.out_path, "output file")->required();

  CLI::App* solve_cmd = app.add_subcommand("solve", "solve a system with a stored factorization");
  solve_cmd->add_option("--chain", opt.chain_path, "factorization file")->required();
  solve_cmd->add_option("--rhs", opt.rhs_path, "right-hand side vector file (original point order)")->required();
  solve_cmd->add_option("--matrix", opt.matrix_path, "compressed matrix file, to report the residual");
  solve_cmd->add_option("--out", opt.out_path, "solution vector file (original point order)")->required();

  CLI::App* rhs = app.add_subcommand("rhs", "write a random right-hand side vector");
  rhs->add_option("--n", opt.n, "vector length")->required();
  rhs->add_option("--seed", opt.seed, "random seed")->capture_default_str();
  rhs->add_option("--out", opt.out_path, "output file")->required();

  CLI::App* bench = app.add_subcommand("bench", "build/factor/solve over a range of sizes");
  add_geometry_flags(bench);
  add_kernel_flags(bench);
  bench->add_option("--sizes", opt.sizes, "problem sizes to sweep")->delimiter(',')->capture_default_str();
  bench->add_option("--eps-h2", opt.eps_h2, "compression tolerance")->capture_default_str();
  bench->add_option("--eps-fill-in", opt.eps_fill_in, "fill-in truncation tolerance")->capture_default_str();
  bench->add_option("--solve-reps", opt.solve_reps, "solve repetitions per size (median is reported)")
      ->capture_default_str();
  bench->add_option("--seed", opt.seed, "random seed for the manufactured solution")->capture_default_str();
  bench->add_option("--csv", opt.csv_path, "also write metrics to this CSV file");
  bench->add_flag("--cold-cache", opt.cold_cache,
                  "evict CPU caches before each timed solve so sizes are comparable");

  for (CLI::App* c : {build, factor, solve_cmd, rhs, bench})
    c->add_flag("--json", opt.as_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(build)) return run_build(opt);
    if (app.got_subcommand(factor)) return run_factor(opt);
    if (app.got_subcommand(solve_cmd)) return run_solve(opt);
    if (app.got_subcommand(rhs)) return run_rhs(opt);
    return run_bench(opt);
  } catch (const SingularPivotError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const NonFiniteError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
