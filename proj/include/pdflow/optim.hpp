#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pdflow/core.hpp"

namespace pdflow {

enum class Direction { kDescent, kAscent };

struct AdamConfig {
  double lr = 1e-3;
  // (0, 0.9) for every model in the presets.
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adam with bias correction. One instance per parameter group.
class Adam {
 public:
  Adam() = default;
  Adam(Index n, AdamConfig config);

  /// Applies one update in place. Rejects the whole update (state untouched) when
  /// any gradient entry is non-finite, reporting the first offending index.
  void step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grad, Direction direction);

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr);
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }
  std::int64_t step_count() const { return t_; }

 private:
  AdamConfig config_;
  Vector m_;
  Vector v_;
  std::int64_t t_ = 0;
};

struct FiniteDiffEntry {
  Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool ok = false;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffEntry> entries;
  std::vector<Index> failures;
  double max_rel_error = 0.0;
  bool passed() const { return failures.empty(); }
};

struct FiniteDiffOptions {
  /// Step is h * max(1, |p_i|).
  double h = 1e-4;
  double tol = 1e-4;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor * max(1, max_j |n_j|)).
  double floor = 1e-4;
};

/// Central-difference gradient check of `analytic` against `loss` at `params`.
FiniteDiffReport finite_diff_check(const std::function<double(const Vector&)>& loss,
                                   const Vector& params, const Vector& analytic,
                                   const FiniteDiffOptions& options = {});

}  // namespace pdflow
