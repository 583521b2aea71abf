#pragma once

#include <cstdint>
#include <vector>

#include "pdflow/core.hpp"
#include "pdflow/energy.hpp"
#include "pdflow/flow.hpp"

namespace pdflow {

/// Importance-sampling estimate of log zeta with the flow as proposal.
struct LogZetaEstimate {
  double value = 0.0;
  Index M = 0;
  /// log q~(y_i) - log p(y_i) per sample.
  Vector log_weights;
  /// (sum w)^2 / sum w^2, in (0, M].
  double ess = 0.0;
  /// Delta-method standard error of `value`.
  double standard_error = 0.0;
};

/// Builds the estimate from precomputed log-weights (max-shifted LogSumExp).
LogZetaEstimate log_zeta_from_weights(const Vector& log_weights);

LogZetaEstimate estimate_log_zeta(const UnnormalizedDensity& density, const FlowModel& flow, Index M,
                                  const Matrix& cond, Rng& rng);

struct ConditionalLogZeta {
  std::vector<LogZetaEstimate> per_condition;
  /// log of the arithmetic mean of the per-condition partitions.
  double log_mean_zeta = 0.0;
  double mean_zeta = 0.0;
};

/// One estimate per row of `conditions`. Each condition draws from its own substream of
/// `seed`, or every condition reuses the same stream when `shared_stream` is set.
ConditionalLogZeta estimate_log_zeta_conditional(const UnnormalizedDensity& density, const FlowModel& flow,
                                                 const Matrix& conditions, Index M, std::uint64_t seed,
                                                 bool shared_stream = false);

struct Box {
  RowVector lo;
  RowVector hi;
  Index dim() const { return lo.size(); }
  double volume() const { return (hi - lo).prod(); }
};

struct QuadratureResult {
  double value = 0.0;
  /// Largest boundary integrand relative to the largest integrand overall.
  double boundary_ratio = 0.0;
  bool boundary_warning = false;
};

/// Trapezoidal rule for log of the integral of exp(log_density) over a 1D or 2D box with
/// `resolution` nodes per axis. Warns when the boundary integrand exceeds
/// `boundary_threshold` times its maximum.
QuadratureResult log_zeta_quadrature(const UnnormalizedDensity& density, const Box& region, Index resolution,
                                     const Matrix& cond = {}, double boundary_threshold = 1e-6);

}  // namespace pdflow
