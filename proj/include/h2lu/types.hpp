#ifndef H2LU_TYPES_HPP
#define H2LU_TYPES_HPP

#include <complex>
#include <stdexcept>
#include <string>
#include <Eigen/Dense>

namespace h2lu {

using cxd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RealVec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using Index = Eigen::Index;

struct InvalidInputError : std::runtime_error {
  explicit InvalidInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SizeGuardError : std::runtime_error {
  explicit SizeGuardError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an unpivoted LU meets a pivot below tolerance. cluster/level are
// -1 when the failure is not attached to a tree location (plain dense call).
struct SingularPivotError : std::runtime_error {
  Index pivot_index;
  double pivot_magnitude;
  int cluster;
  int level;
  SingularPivotError(const std::string& msg, Index idx, double mag, int cl = -1, int lv = -1)
      : std::runtime_error(msg), pivot_index(idx), pivot_magnitude(mag), cluster(cl), level(lv) {}
};

struct UndefinedMetricError : std::runtime_error {
  explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SerializationError : std::runtime_error {
  explicit SerializationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IndexRange {
  Index begin = 0;
  Index end = 0;
  Index size() const { return end - begin; }
};

}  // namespace h2lu

#endif
