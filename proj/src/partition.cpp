#include "pdflow/partition.hpp"

#include <algorithm>

namespace pdflow {

LogZetaEstimate log_zeta_from_weights(const Vector& log_weights) {
  if (log_weights.size() == 0) throw Error("estimate_log_zeta: no samples");
  for (Index i = 0; i < log_weights.size(); ++i) {
    if (std::isnan(log_weights[i]) || log_weights[i] == INFINITY) {
      throw NonFiniteError("estimate_log_zeta: invalid log-weight", i);
    }
  }
  const double mx = log_weights.maxCoeff();
  if (mx == -INFINITY) throw Error("estimate_log_zeta: proposal disjoint from energy support");
  LogZetaEstimate est;
  est.M = log_weights.size();
  est.log_weights = log_weights;
  const Vector w = (log_weights.array() - mx).exp();
  const double s = w.sum();
  const auto m = static_cast<double>(est.M);
  est.value = mx + std::log(s) - std::log(m);
  est.ess = s * s / w.squaredNorm();
  const double mean = s / m;
  const double var = est.M > 1 ? (w.array() - mean).square().sum() / (m - 1.0) : 0.0;
  est.standard_error = std::sqrt(var / m) / mean;
  return est;
}

LogZetaEstimate estimate_log_zeta(const UnnormalizedDensity& density, const FlowModel& flow, Index M,
                                  const Matrix& cond, Rng& rng) {
  if (M < 1) throw Error("estimate_log_zeta: M must be >= 1");
  if (density.dim() != flow.dim()) throw Error("estimate_log_zeta: dimension mismatch");
  const auto s = flow.sample_with_log_prob(M, cond, rng);
  require_finite(s.log_probs, "estimate_log_zeta: non-finite proposal log-probability");
  return log_zeta_from_weights(density.log_density(s.points, cond) - s.log_probs);
}

ConditionalLogZeta estimate_log_zeta_conditional(const UnnormalizedDensity& density, const FlowModel& flow,
                                                 const Matrix& conditions, Index M, std::uint64_t seed,
                                                 bool shared_stream) {
  if (flow.cond_dim() == 0 || density.cond_dim() == 0) {
    throw Error("estimate_log_zeta_conditional: models must be conditional");
  }
  if (conditions.rows() < 1) throw Error("estimate_log_zeta_conditional: no conditions");
  ConditionalLogZeta out;
  Vector logs(conditions.rows());
  for (Index i = 0; i < conditions.rows(); ++i) {
    Rng rng(derive_seed(seed, shared_stream ? 0 : static_cast<std::uint64_t>(i)));
    try {
      out.per_condition.push_back(estimate_log_zeta(density, flow, M, conditions.row(i), rng));
    } catch (const Error& e) {
      throw Error("condition " + std::to_string(i) + ": " + e.what());
    }
    logs[i] = out.per_condition.back().value;
  }
  out.log_mean_zeta = log_sum_exp(logs) - std::log(static_cast<double>(logs.size()));
  out.mean_zeta = std::exp(out.log_mean_zeta);
  return out;
}

QuadratureResult log_zeta_quadrature(const UnnormalizedDensity& density, const Box& region, Index resolution,
                                     const Matrix& cond, double boundary_threshold) {
  const Index d = region.dim();
  if (d < 1 || d > 2 || d != density.dim()) throw Error("log_zeta_quadrature: only 1D and 2D regions");
  if (region.hi.size() != d || ((region.hi - region.lo).array() <= 0.0).any()) {
    throw Error("log_zeta_quadrature: empty region");
  }
  if (resolution < 2) throw Error("log_zeta_quadrature: resolution must be >= 2");
  const RowVector step = (region.hi - region.lo) / static_cast<double>(resolution - 1);
  const Index total = d == 1 ? resolution : resolution * resolution;

  // Log integrand plus log trapezoid weight, evaluated in chunks of grid rows.
  Vector terms(total);
  double max_all = -INFINITY;
  double max_boundary = -INFINITY;
  const Index chunk = 8192;
  for (Index start = 0; start < total; start += chunk) {
    const Index n = std::min(chunk, total - start);
    Matrix pts(n, d);
    for (Index k = 0; k < n; ++k) {
      const Index idx = start + k;
      pts(k, 0) = region.lo[0] + static_cast<double>(idx % resolution) * step[0];
      if (d == 2) pts(k, 1) = region.lo[1] + static_cast<double>(idx / resolution) * step[1];
    }
    const Vector ld = density.log_density(pts, cond);
    for (Index k = 0; k < n; ++k) {
      const Index idx = start + k;
      const Index i = idx % resolution;
      const Index j = d == 2 ? idx / resolution : 0;
      const bool edge_i = i == 0 || i == resolution - 1;
      const bool edge_j = d == 2 && (j == 0 || j == resolution - 1);
      double lw = ld[k];
      if (edge_i) lw -= std::log(2.0);
      if (edge_j) lw -= std::log(2.0);
      terms[idx] = lw;
      max_all = std::max(max_all, ld[k]);
      if (edge_i || edge_j) max_boundary = std::max(max_boundary, ld[k]);
    }
  }
  QuadratureResult r;
  r.value = log_sum_exp(terms) + std::log(step.prod());
  r.boundary_ratio = std::exp(max_boundary - max_all);
  if (r.boundary_ratio > boundary_threshold) {
    r.boundary_warning = true;
    warn("log_zeta_quadrature: boundary density ratio " + std::to_string(r.boundary_ratio) +
         "; region may be too small");
  }
  return r;
}

}  // namespace pdflow
