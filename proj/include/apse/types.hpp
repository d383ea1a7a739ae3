#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace apse {

using Index = Eigen::Index;
using Complex = std::complex<double>;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using SpMat = Eigen::SparseMatrix<double>;
using SpCMat = Eigen::SparseMatrix<Complex>;
using SpIMat = Eigen::SparseMatrix<int>;

enum class ErrorKind {
  MalformedGraph,
  DimensionMismatch,
  DegenerateState,
  InvalidMeasurement,
  Observability,
  Conditioning,
  DegenerateBasis,
  Infeasible,
  Parse,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Base exception for every failure the library reports. The kind drives
/// CLI exit codes and lets callers branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when a normal-equation operator is too ill-conditioned to invert.
class ConditioningError : public Error {
 public:
  ConditioningError(const std::string& what, double rcond_estimate)
      : Error(ErrorKind::Conditioning, what), rcond_(rcond_estimate) {}

  double rcond_estimate() const noexcept { return rcond_; }

 private:
  double rcond_;
};

inline double inf_norm(const Vec& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

}  // namespace apse
