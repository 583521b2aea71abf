#include "pdflow/trainer.hpp"

namespace pdflow {

namespace {

constexpr double kMaxLogWeight = 700.0;

struct Pass {
  ConstraintValues c;
  Vector lp_x;
  Vector f_x;
  Vector f_y;
  Vector f_z;   // equals f_y in same-batch mode
  Vector w_z;   // unnormalized importance weights
  EnergyModel::Tape tape_x, tape_y, tape_z;
};

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw Error(std::string("empirical_lagrangian: non-finite ") + term);
}

void check_shapes(const FrozenSamples& s) {
  if (s.y.rows() != s.y_log_prob.size()) throw Error("FrozenSamples: y and y_log_prob differ in length");
  if (s.zeta_points.rows() != s.zeta_log_prob.size()) {
    throw Error("FrozenSamples: zeta_points and zeta_log_prob differ in length");
  }
  if (s.x.rows() == 0 || s.y.rows() == 0) throw Error("FrozenSamples: empty sample set");
}

// Constraint values; `lp_x` is supplied when the caller already has it.
Pass forward_pass(const FlowModel& flow, const EnergyModel& ebm, const FrozenSamples& s, const Vector* lp_x) {
  check_shapes(s);
  const double t = ebm.temperature();
  Pass p;
  p.lp_x = lp_x != nullptr ? *lp_x : flow.log_prob(s.x, s.x_cond);
  p.f_x = ebm.energy(s.x, s.x_cond, p.tape_x);
  p.f_y = ebm.energy(s.y, s.y_cond, p.tape_y);
  Vector lw;
  if (s.same_batch()) {
    p.f_z = p.f_y;
    lw = p.f_y / t - s.y_log_prob;
  } else {
    p.f_z = ebm.energy(s.zeta_points, s.zeta_cond, p.tape_z);
    lw = p.f_z / t - s.zeta_log_prob;
  }
  const double max_lw = lw.maxCoeff();
  if (!(max_lw <= kMaxLogWeight)) {
    throw Error("zeta estimate: overflow in exponent (max log-weight " + std::to_string(max_lw) + ")");
  }
  const LogZetaEstimate est = log_zeta_from_weights(lw);
  p.w_z = lw.array().exp();
  auto& c = p.c;
  c.log_zeta = est.value;
  c.zeta = std::exp(est.value);
  c.ess = est.ess;
  c.nll_flow = -p.lp_x.mean();
  c.reverse_kl = t * ((s.y_log_prob - p.f_y / t).mean() + c.log_zeta);
  c.nll_ebm = -(p.f_x / t).mean() + c.log_zeta;
  check_finite(c.nll_flow, "forward NLL term");
  check_finite(c.reverse_kl, "reverse KL term");
  check_finite(c.nll_ebm, "EBM NLL term");
  check_finite(c.zeta, "partition term");
  return p;
}

double lagrangian_from(const ConstraintValues& c, const DualState& d) {
  double slack = 0.0;
  if (d.slacks_enabled) {
    slack = d.eps_fw * d.eps_fw + d.eps_rv * d.eps_rv + d.eps_ebm * d.eps_ebm;
    if (d.variant == Variant::kNegativeNll) slack -= d.delta_fw + d.delta_ebm;
  }
  const auto g = grad_lambda(c, d);
  const auto l = d.lambdas();
  double sum = slack;
  for (std::size_t k = 0; k < 5; ++k) sum += l[k] * g[k];
  return sum;
}

GradVector psi_gradient(const EnergyModel& ebm, const DualState& d, const FrozenSamples& s, const Pass& p) {
  const double t = ebm.temperature();
  const auto nx = static_cast<double>(s.x.rows());
  const auto ny = static_cast<double>(s.y.rows());
  const auto nz = static_cast<double>(p.w_z.size());
  const double coef = (d.lambda_prx + t * d.lambda_rv) / p.c.zeta + d.lambda_u - d.lambda_l;
  GradVector g = GradVector::Zero(ebm.params().size());
  ebm.backward(p.tape_x, Vector::Constant(s.x.rows(), -d.lambda_prx / (t * nx)), &g, nullptr);
  Vector wy = Vector::Constant(s.y.rows(), -d.lambda_rv / ny);
  const Vector wz = p.w_z * (coef / (t * nz));
  if (s.same_batch()) {
    wy += wz;
    ebm.backward(p.tape_y, wy, &g, nullptr);
  } else {
    ebm.backward(p.tape_y, wy, &g, nullptr);
    ebm.backward(p.tape_z, wz, &g, nullptr);
  }
  require_finite(g, "grad_psi: non-finite gradient");
  return g;
}

// Adds the score-function reverse-KL term to `g`.
void add_score_term(const FlowModel& flow, const EnergyModel& ebm, const DualState& d, const FrozenSamples& s,
                    const Vector& f_y, GradVector& g) {
  if (d.lambda_rv == 0.0) return;
  const double t = ebm.temperature();
  const Vector w = (d.lambda_rv / static_cast<double>(s.y.rows())) * (t * s.y_log_prob - f_y);
  require_finite(w, "grad_theta: non-finite score coefficient");
  flow.log_prob_backward(s.y, s.y_cond, w, g);
}

Matrix pick_rows(const Matrix& pool, Index n, Rng& rng) {
  std::uniform_int_distribution<Index> pick(0, pool.rows() - 1);
  Matrix out(n, pool.cols());
  for (Index i = 0; i < n; ++i) out.row(i) = pool.row(pick(rng));
  return out;
}

void initialize_dual(TrainerState& st) {
  const TrainConfig& cfg = st.config;
  DualState& d = st.dual;
  d = DualState{};
  d.variant = cfg.variant;
  d.eps_zeta = cfg.eps_zeta;
  switch (cfg.mode) {
    case TrainMode::kDual:
      d.set_lambdas({cfg.lambda_init, cfg.lambda_init, cfg.lambda_init,
                     cfg.variant == Variant::kNegativeNll ? cfg.lambda_init : 0.0,
                     cfg.variant == Variant::kNegativeNll ? cfg.lambda_init : 0.0});
      d.update_slacks();
      break;
    case TrainMode::kWeightedSum:
      d.set_lambdas({cfg.w_for, cfg.w_back, 1.0, 0.0, 0.0});
      d.slacks_enabled = false;
      break;
    case TrainMode::kFlowOnly:
      d.set_lambdas({1.0, 0.0, 0.0, 0.0, 0.0});
      d.slacks_enabled = false;
      break;
  }
}

}  // namespace

double solve_slack_eps(double lambda) {
  if (!(lambda >= 0.0)) throw Error("solve_slack_eps: lambda must be non-negative");
  return lambda / 2.0;
}

double solve_slack_delta(double lambda) {
  if (!(lambda > 0.0)) throw Error("solve_slack_delta: inactive constraint in negative-NLL variant");
  return 1.0 / (2.0 * lambda);
}

void DualState::set_lambdas(const std::array<double, 5>& l) {
  lambda_fw = l[0];
  lambda_rv = l[1];
  lambda_prx = l[2];
  lambda_u = l[3];
  lambda_l = l[4];
}

void DualState::update_slacks() {
  if (!slacks_enabled) {
    eps_fw = eps_rv = eps_ebm = delta_fw = delta_ebm = 0.0;
    return;
  }
  eps_fw = solve_slack_eps(lambda_fw);
  eps_rv = solve_slack_eps(lambda_rv);
  eps_ebm = solve_slack_eps(lambda_prx);
  if (variant == Variant::kNegativeNll) {
    delta_fw = solve_slack_delta(lambda_fw);
    delta_ebm = solve_slack_delta(lambda_prx);
  } else {
    delta_fw = delta_ebm = 0.0;
  }
}

ConstraintValues evaluate_constraints(const FlowModel& flow, const EnergyModel& ebm, const FrozenSamples& s) {
  return forward_pass(flow, ebm, s, nullptr).c;
}

double empirical_lagrangian(const FlowModel& flow, const EnergyModel& ebm, const DualState& dual,
                            const FrozenSamples& s) {
  const double l = lagrangian_from(evaluate_constraints(flow, ebm, s), dual);
  check_finite(l, "Lagrangian");
  return l;
}

GradVector grad_psi(const FlowModel& flow, const EnergyModel& ebm, const DualState& dual, const FrozenSamples& s) {
  return psi_gradient(ebm, dual, s, forward_pass(flow, ebm, s, nullptr));
}

GradVector grad_theta(const FlowModel& flow, const EnergyModel& ebm, const DualState& dual,
                      const FrozenSamples& s) {
  check_shapes(s);
  GradVector g = GradVector::Zero(flow.params().size());
  flow.log_prob_backward(s.x, s.x_cond, Vector::Constant(s.x.rows(), -dual.lambda_fw / static_cast<double>(s.x.rows())),
                         g);
  if (dual.lambda_rv != 0.0) add_score_term(flow, ebm, dual, s, ebm.energy(s.y, s.y_cond), g);
  require_finite(g, "grad_theta: non-finite score");
  return g;
}

std::array<double, 5> grad_lambda(const ConstraintValues& c, const DualState& d) {
  return {c.nll_flow - d.eps_fw + d.delta_fw * d.delta_fw, c.reverse_kl - d.eps_rv,
          c.nll_ebm - d.eps_ebm + d.delta_ebm * d.delta_ebm, c.zeta - 1.0 - d.eps_zeta, 1.0 - c.zeta};
}

TrainerState make_trainer(const TrainConfig& config, FlowModel flow, EnergyModel ebm, std::uint64_t seed) {
  if (!(config.lr_flow > 0 && config.lr_ebm > 0 && config.lr_lambda > 0 && config.lr_norm > 0)) {
    throw Error("make_trainer: learning rates must be positive");
  }
  if (config.M < 1 || config.zeta_refresh < 1 || config.flow_samples < 0 || !(config.eps_zeta > 0)) {
    throw Error("make_trainer: invalid sample counts or tolerance");
  }
  if (config.mode == TrainMode::kDual && !(config.lambda_init >= 0)) throw Error("make_trainer: lambda_init < 0");
  if (config.mode == TrainMode::kDual && config.variant == Variant::kNegativeNll && !(config.lambda_init > 0)) {
    throw Error("make_trainer: the negative-NLL variant needs lambda_init > 0");
  }
  if (config.mode == TrainMode::kWeightedSum && !(config.w_for > 0 && config.w_back > 0)) {
    throw Error("make_trainer: weights must be positive");
  }
  if (flow.dim() != ebm.dim() || flow.cond_dim() != ebm.cond_dim()) {
    throw Error("make_trainer: flow and energy model disagree on dimensions");
  }
  TrainerState st;
  st.config = config;
  st.flow = std::move(flow);
  st.ebm = std::move(ebm);
  AdamConfig a;
  a.lr = config.lr_flow;
  st.opt_theta = Adam(st.flow.params().size(), a);
  a.lr = config.lr_ebm;
  st.opt_psi = Adam(st.ebm.params().size(), a);
  a.lr = config.lr_lambda;
  st.opt_lambda = Adam(3, a);
  a.lr = config.lr_norm;
  st.opt_norm = Adam(2, a);
  st.rng.seed(derive_seed(seed, 0x7A1));
  initialize_dual(st);
  return st;
}

StepMetrics train_step(TrainerState& state, const Matrix& x, const Matrix& x_cond, const Matrix& cond_pool) {
  const TrainerState snapshot = state;
  try {
    const TrainConfig& cfg = state.config;
    const bool conditional = state.flow.cond_dim() > 0;
    const Index n = x.rows();
    if (n < 1) throw Error("train_step: empty batch");
    StepMetrics m;
    DualState& d = state.dual;
    const auto nx = static_cast<double>(n);

    if (cfg.mode == TrainMode::kFlowOnly) {
      GradVector gt = GradVector::Zero(state.flow.params().size());
      const Vector lp = state.flow.log_prob_backward(x, x_cond, Vector::Constant(n, -1.0 / nx), gt);
      m.constraints.nll_flow = -lp.mean();
      check_finite(m.constraints.nll_flow, "forward NLL term");
      m.lagrangian = m.constraints.nll_flow;
      state.opt_theta.step(state.flow.params().values(), gt, Direction::kDescent);
      m.dual = d;
      m.step = ++state.step;
      return m;
    }

    state.ebm.power_iteration(1);
    if (cfg.mode == TrainMode::kDual) d.update_slacks();

    FrozenSamples s;
    s.x = x;
    s.x_cond = x_cond;
    if (conditional) {
      s.y_cond = x_cond.rows() == n ? x_cond : broadcast_rows(x_cond, n);
    }
    const Index ny = conditional ? n : (cfg.flow_samples > 0 ? cfg.flow_samples : n);
    auto ys = state.flow.sample_with_log_prob(ny, s.y_cond, state.rng);
    s.y = std::move(ys.points);
    s.y_log_prob = std::move(ys.log_probs);

    if (cfg.zeta_source == ZetaSource::kIndependent) {
      if (state.zeta_points.rows() == 0 || state.step % cfg.zeta_refresh == 0) {
        Matrix zc;
        if (conditional) zc = pick_rows(cond_pool.rows() > 0 ? cond_pool : s.y_cond, cfg.M, state.rng);
        auto zs = state.flow.sample_with_log_prob(cfg.M, zc, state.rng);
        state.zeta_points = std::move(zs.points);
        state.zeta_log_prob = std::move(zs.log_probs);
        state.zeta_cond = std::move(zc);
      }
      s.zeta_points = state.zeta_points;
      s.zeta_log_prob = state.zeta_log_prob;
      s.zeta_cond = state.zeta_cond;
    }

    GradVector gt = GradVector::Zero(state.flow.params().size());
    const Vector lp_x = state.flow.log_prob_backward(x, x_cond, Vector::Constant(n, -d.lambda_fw / nx), gt);
    const Pass p = forward_pass(state.flow, state.ebm, s, &lp_x);
    add_score_term(state.flow, state.ebm, d, s, p.f_y, gt);
    require_finite(gt, "grad_theta: non-finite gradient");
    const GradVector gp = psi_gradient(state.ebm, d, s, p);
    m.constraints = p.c;
    m.lagrangian = lagrangian_from(p.c, d);
    check_finite(m.lagrangian, "Lagrangian");

    state.opt_theta.step(state.flow.params().values(), gt, Direction::kDescent);
    state.opt_psi.step(state.ebm.params().values(), gp, Direction::kDescent);
    if (cfg.mode == TrainMode::kDual) {
      const auto gl = grad_lambda(p.c, d);
      Vector l3(3), g3(3), l2(2), g2(2);
      l3 << d.lambda_fw, d.lambda_rv, d.lambda_prx;
      g3 << gl[0], gl[1], gl[2];
      l2 << d.lambda_u, d.lambda_l;
      g2 << gl[3], gl[4];
      state.opt_lambda.step(l3, g3, Direction::kAscent);
      state.opt_norm.step(l2, g2, Direction::kAscent);
      l3 = l3.cwiseMax(0.0);
      l2 = l2.cwiseMax(0.0);
      if (cfg.variant == Variant::kNegativeNll) {
        l3[0] = std::max(l3[0], cfg.lambda_floor);
        l3[2] = std::max(l3[2], cfg.lambda_floor);
      }
      d.set_lambdas({l3[0], l3[1], l3[2], l2[0], l2[1]});
      d.update_slacks();
    }
    m.dual = d;
    m.step = ++state.step;
    return m;
  } catch (...) {
    state = snapshot;
    throw;
  }
}

}  // namespace pdflow
