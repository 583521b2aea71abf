#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace pdflow {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
/// Batches are stored one point per row.
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces NaN or infinity where a finite value is required.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, Index index)
      : Error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  Index index() const noexcept { return index_; }

 private:
  Index index_;
};

/// splitmix64 finalizer; used to derive independent substream seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  // Row-major fill so a batch of n points consumes the stream point by point.
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = normal(rng);
  }
  return out;
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& values, const std::string& what) {
  for (Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values.derived().data()[i])) throw NonFiniteError(what, i);
  }
}

inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) return -INFINITY;
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Warning sink; defaults to stderr. Tests may swap it to capture messages.
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) { warning_sink()(msg); }

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Rows of `cond` for a batch of `n` points: either empty, one broadcast row, or n rows.
inline bool condition_matches(const Matrix& cond, Index n, Index cond_dim) {
  if (cond_dim == 0) return cond.size() == 0;
  return cond.cols() == cond_dim && (cond.rows() == n || cond.rows() == 1);
}

inline Matrix broadcast_rows(const Matrix& cond, Index n) {
  if (cond.rows() == n) return cond;
  return cond.replicate(n, 1);
}

}  // namespace pdflow
