#pragma once

#include <span>
#include <vector>

#include "pdflow/core.hpp"

namespace pdflow {

struct SplineOptions {
  int bins = 8;
  double tail_bound = 4.0;
  double min_width = 1e-3;
  double min_height = 1e-3;
  double min_derivative = 1e-3;

  /// Unconstrained values per transformed coordinate: K widths, K heights, K-1 interior derivatives.
  Index raw_size() const { return 3 * bins - 1; }
};

/// Monotone rational-quadratic spline on [-B, B] with identity (linear) tails.
struct SplineTransformParams {
  std::vector<double> widths;       // K, sum 2B
  std::vector<double> heights;      // K, sum 2B
  std::vector<double> derivatives;  // K+1, end values 1 to match the tails
  double tail_bound = 4.0;

  int bins() const { return static_cast<int>(widths.size()); }

  static SplineTransformParams identity(int bins, double tail_bound);
  /// Softmax-normalized widths/heights and softplus derivatives, with minimum sizes.
  static SplineTransformParams from_unconstrained(std::span<const double> raw,
                                                  const SplineOptions& options);
  /// Throws on non-finite or non-positive entries, or sums that differ from 2B.
  void validate() const;
};

struct SplineResult {
  double value = 0.0;
  double log_det = 0.0;  // log |d value / d input|
};

SplineResult spline_forward(double x, const SplineTransformParams& params);
SplineResult spline_inverse(double y, const SplineTransformParams& params);

/// Gradients of the inverse transform at `y`. Given upstream dL/dx (`g_out`) and
/// dL/dlog_det (`g_log_det`), accumulates dL/draw into `d_raw` and returns dL/dy.
double spline_inverse_backward(double y, std::span<const double> raw, const SplineOptions& options,
                               double g_out, double g_log_det, std::span<double> d_raw);

}  // namespace pdflow
