#ifndef H2LU_GEOMETRY_HPP
#define H2LU_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

#include "h2lu/types.hpp"

namespace h2lu {

using PointCloud = std::vector<Vec3>;

struct BoundingBox {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  double diameter() const { return (hi - lo).norm(); }

  int longest_axis() const {
    Vec3 ext = hi - lo;
    int ax = 0;
    if (ext[1] > ext[0]) ax = 1;
    if (ext[2] > ext[ax]) ax = 2;
    return ax;
  }

  static BoundingBox of(const PointCloud& pts, const std::vector<Index>& perm, Index begin, Index end) {
    BoundingBox box;
    if (begin >= end) return box;  // empty clusters happen when a 1-point box splits
    box.lo = pts[perm[begin]];
    box.hi = pts[perm[begin]];
    for (Index i = begin + 1; i < end; ++i) {
      box.lo = box.lo.cwiseMin(pts[perm[i]]);
      box.hi = box.hi.cwiseMax(pts[perm[i]]);
    }
    return box;
  }
};

// Euclidean distance between two axis-aligned boxes (0 when they touch or overlap).
inline double box_distance(const BoundingBox& a, const BoundingBox& b) {
  double d2 = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    double gap = std::max({a.lo[ax] - b.hi[ax], b.lo[ax] - a.hi[ax], 0.0});
    d2 += gap * gap;
  }
  return std::sqrt(d2);
}

inline PointCloud rod_points(Index n, double spacing = 1.0) {
  PointCloud pts(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) pts[i] = Vec3(static_cast<double>(i) * spacing, 0.0, 0.0);
  return pts;
}

// First n nodes of a square grid with the given spacing.
inline PointCloud slab_points(Index n, double spacing = 1.0) {
  Index side = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n))));
  PointCloud pts;
  pts.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index ix = i % side, iy = i / side;
    pts.emplace_back(ix * spacing, iy * spacing, 0.0);
  }
  return pts;
}

inline PointCloud cube_points(Index n, double spacing = 1.0) {
  Index side = static_cast<Index>(std::ceil(std::cbrt(static_cast<double>(n))));
  while (side * side * side < n) ++side;
  PointCloud pts;
  pts.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index ix = i % side, iy = (i / side) % side, iz = i / (side * side);
    pts.emplace_back(ix * spacing, iy * spacing, iz * spacing);
  }
  return pts;
}

// CSV: one "x,y,z" row per point. Blank lines are skipped.
inline PointCloud load_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open point file: " + path);
  PointCloud pts;
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double v[3];
    char sep;
    if (!(ss >> v[0] >> sep >> v[1] >> sep >> v[2]))
      throw InvalidInputError("bad CSV point at line " + std::to_string(lineno) + " of " + path);
    pts.emplace_back(v[0], v[1], v[2]);
  }
  return pts;
}

// Raw little-endian f64 triples, no header.
inline PointCloud load_points_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw InvalidInputError("cannot open point file: " + path);
  std::streamoff bytes = in.tellg();
  if (bytes % 24 != 0) throw InvalidInputError("binary point file size is not a multiple of 24: " + path);
  Index n = static_cast<Index>(bytes / 24);
  in.seekg(0);
  PointCloud pts(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    double v[3];
    in.read(reinterpret_cast<char*>(v), 24);
    if (!in) throw InvalidInputError("truncated binary point file: " + path);
    pts[static_cast<size_t>(i)] = Vec3(v[0], v[1], v[2]);
  }
  return pts;
}

inline void save_points_bin(const std::string& path, const PointCloud& pts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot write point file: " + path);
  for (const auto& p : pts) {
    double v[3] = {p[0], p[1], p[2]};
    out.write(reinterpret_cast<const char*>(v), 24);
  }
}

}  // namespace h2lu

#endif
