#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "pdflow/core.hpp"
#include "pdflow/energy.hpp"
#include "pdflow/flow.hpp"
#include "pdflow/optim.hpp"
#include "pdflow/partition.hpp"

namespace pdflow {

enum class Variant { kStandard, kNegativeNll };
enum class TrainMode {
  kDual,         // primal-dual with multiplier ascent
  kWeightedSum,  // fixed weights, no slacks, no multiplier updates
  kFlowOnly,     // flow maximum likelihood only (the NF baseline)
};
enum class ZetaSource {
  kSameBatch,    // zeta from the reverse-KL samples themselves
  kIndependent,  // zeta from a separate M-sample draw
};

/// Closed-form resilient slack: eps = lambda / 2.
double solve_slack_eps(double lambda);
/// Closed-form slack of the negative-NLL variant: delta = 1 / (2 lambda).
double solve_slack_delta(double lambda);

struct DualState {
  double lambda_fw = 0.0;
  double lambda_rv = 0.0;
  double lambda_prx = 0.0;
  double lambda_u = 0.0;
  double lambda_l = 0.0;
  double eps_fw = 0.0;
  double eps_rv = 0.0;
  double eps_ebm = 0.0;
  double delta_fw = 0.0;
  double delta_ebm = 0.0;
  double eps_zeta = 0.1;
  Variant variant = Variant::kStandard;
  /// Weighted-sum mode sets this so that no slack terms enter the objective.
  bool slacks_enabled = true;

  std::array<double, 5> lambdas() const { return {lambda_fw, lambda_rv, lambda_prx, lambda_u, lambda_l}; }
  void set_lambdas(const std::array<double, 5>& l);
  /// Recomputes eps (and delta in the negative-NLL variant) from the current lambdas.
  void update_slacks();
};

/// Sample sets held fixed while the Lagrangian and its gradients are evaluated.
/// Conditions are empty for unconditional models, otherwise one row per point.
struct FrozenSamples {
  Matrix x;
  Matrix x_cond;
  Matrix y;
  Vector y_log_prob;
  Matrix y_cond;
  /// Partition samples; when empty, zeta is estimated from y (same-batch mode).
  Matrix zeta_points;
  Vector zeta_log_prob;
  Matrix zeta_cond;

  bool same_batch() const { return zeta_points.rows() == 0; }
};

struct ConstraintValues {
  double nll_flow = 0.0;
  /// T * mean(log p(y) - f(y)/T) + T log zeta.
  double reverse_kl = 0.0;
  double nll_ebm = 0.0;
  double zeta = 1.0;
  double log_zeta = 0.0;
  double ess = 0.0;
};

/// Constraint values at the frozen samples; the flow is only evaluated on x.
ConstraintValues evaluate_constraints(const FlowModel& flow, const EnergyModel& ebm, const FrozenSamples& s);

/// The Lagrangian with the supplied slacks, term by term.
double empirical_lagrangian(const FlowModel& flow, const EnergyModel& ebm, const DualState& dual,
                            const FrozenSamples& s);

GradVector grad_psi(const FlowModel& flow, const EnergyModel& ebm, const DualState& dual, const FrozenSamples& s);

/// Forward-NLL term plus the score-function estimate of the reverse-KL term.
GradVector grad_theta(const FlowModel& flow, const EnergyModel& ebm, const DualState& dual,
                      const FrozenSamples& s);

/// Ascent directions for (fw, rv, prx, u, l).
std::array<double, 5> grad_lambda(const ConstraintValues& c, const DualState& dual);

struct TrainConfig {
  TrainMode mode = TrainMode::kDual;
  Variant variant = Variant::kStandard;
  double lr_flow = 1e-3;
  double lr_ebm = 1e-4;
  double lr_lambda = 1e-4;
  double lr_norm = 1e-3;
  double eps_zeta = 0.1;
  /// Initial value of the KL multipliers (fw, rv, prx).
  double lambda_init = 0.01;
  /// Negative-NLL variant: lower bound on lambda_fw and lambda_prx after clamping.
  double lambda_floor = 1e-6;
  /// Reverse-KL sample count per step; 0 uses the data batch size.
  Index flow_samples = 0;
  /// Partition sample count.
  Index M = 1000;
  ZetaSource zeta_source = ZetaSource::kIndependent;
  /// Partition samples are redrawn every this many steps.
  int zeta_refresh = 1;
  double w_for = 1.0;
  double w_back = 1.0;
};

struct TrainerState {
  TrainConfig config;
  FlowModel flow;
  EnergyModel ebm;
  DualState dual;
  Adam opt_theta;
  Adam opt_psi;
  Adam opt_lambda;
  Adam opt_norm;
  Rng rng;
  std::int64_t step = 0;
  // Cached partition samples for zeta_refresh > 1.
  Matrix zeta_points;
  Vector zeta_log_prob;
  Matrix zeta_cond;
};

/// Sets up optimizers and the initial multipliers for `config`.
TrainerState make_trainer(const TrainConfig& config, FlowModel flow, EnergyModel ebm, std::uint64_t seed);

struct StepMetrics {
  std::int64_t step = 0;
  ConstraintValues constraints;
  DualState dual;
  double lagrangian = 0.0;
};

/// One primal-dual step on the minibatch `x` (with per-row conditions `x_cond`).
/// Conditional partition samples take their conditions from rows of `cond_pool`
/// (defaults to `x_cond`). Any failure restores the state and rethrows.
StepMetrics train_step(TrainerState& state, const Matrix& x, const Matrix& x_cond = {},
                       const Matrix& cond_pool = {});

}  // namespace pdflow
