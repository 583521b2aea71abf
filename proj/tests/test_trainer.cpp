#include <gtest/gtest.h>

#include "pdflow/optim.hpp"
#include "pdflow/trainer.hpp"

using namespace pdflow;

namespace {

FlowModel small_flow(Index cond_dim = 0, std::uint64_t seed = 1) {
  FlowConfig c;
  c.cond_dim = cond_dim;
  c.transforms = 2;
  c.hidden = 16;
  c.output_init_scale = 0.5;
  return FlowModel(c, seed);
}

EnergyModel small_ebm(Index cond_dim = 0, std::uint64_t seed = 2, double t = 1.0) {
  EnergyConfig c;
  c.hidden = 16;
  c.blocks = 2;
  c.cond_dim = cond_dim;
  c.temperature = t;
  return EnergyModel(c, seed);
}

FrozenSamples frozen(const FlowModel& flow, Rng& rng, Index nx, Index ny, Index nz) {
  FrozenSamples s;
  s.x = standard_normal(nx, 2, rng);
  auto y = flow.sample_with_log_prob(ny, {}, rng);
  s.y = y.points;
  s.y_log_prob = y.log_probs;
  if (nz > 0) {
    auto z = flow.sample_with_log_prob(nz, {}, rng);
    s.zeta_points = z.points;
    s.zeta_log_prob = z.log_probs;
  }
  return s;
}

DualState random_dual(Rng& rng, Variant v = Variant::kStandard) {
  std::uniform_real_distribution<double> u(0.05, 2.0);
  DualState d;
  d.variant = v;
  d.set_lambdas({u(rng), u(rng), u(rng), u(rng), u(rng)});
  d.update_slacks();
  return d;
}

}  // namespace

TEST(Slack, ClosedForms) {
  EXPECT_EQ(solve_slack_eps(2.0), 1.0);
  EXPECT_EQ(solve_slack_eps(0.0), 0.0);
  EXPECT_EQ(solve_slack_eps(0.3), 0.15);
  EXPECT_EQ(solve_slack_delta(0.5), 1.0);
  EXPECT_EQ(solve_slack_delta(1.0), 0.5);
  try {
    solve_slack_delta(0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("inactive constraint"), std::string::npos);
  }
}

TEST(Lagrangian, EmptyAndNormalizationCancellation) {
  const FlowModel f = small_flow();
  const EnergyModel e = small_ebm();
  Rng rng(3);
  const FrozenSamples s = frozen(f, rng, 8, 8, 0);
  DualState d;
  EXPECT_EQ(empirical_lagrangian(f, e, d, s), 0.0);
  d.lambda_u = d.lambda_l = 0.7;
  d.eps_zeta = 0.1;
  EXPECT_NEAR(empirical_lagrangian(f, e, d, s), -0.7 * 0.1, 1e-14);
}

TEST(GradLambda, Arithmetic) {
  ConstraintValues c;
  c.nll_flow = 2.0;
  c.zeta = 1.0;
  DualState d;
  d.eps_fw = 0.5;
  d.eps_zeta = 0.1;
  const auto g = grad_lambda(c, d);
  EXPECT_EQ(g[0], 1.5);
  EXPECT_NEAR(g[3], -0.1, 1e-15);
  EXPECT_EQ(g[4], 0.0);
  c.reverse_kl = 0.25;
  d.eps_rv = 0.25;
  EXPECT_EQ(grad_lambda(c, d)[1], 0.0);
  c.nll_ebm = 1.0;
  d.eps_ebm = 0.4;
  EXPECT_NEAR(grad_lambda(c, d)[2], 0.6, 1e-15);
}

TEST(GradPsi, CancelsWhenOnlyNormalizationMultipliersAreEqual) {
  const FlowModel f = small_flow();
  const EnergyModel e = small_ebm();
  Rng rng(4);
  DualState d;
  d.lambda_u = d.lambda_l = 0.3;
  const auto g = grad_psi(f, e, d, frozen(f, rng, 8, 8, 16));
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradPsi, MatchesFiniteDifferencesSameBatch) {
  for (double t : {1.0, 0.5}) {
    for (Variant v : {Variant::kStandard, Variant::kNegativeNll}) {
      const FlowModel f = small_flow();
      EnergyModel e = small_ebm(0, 5, t);
      Rng rng(6);
      const FrozenSamples s = frozen(f, rng, 12, 12, 0);
      const DualState d = random_dual(rng, v);
      const GradVector g = grad_psi(f, e, d, s);
      const Vector p0 = e.params().values();
      const auto states = e.power_states();
      auto loss = [&](const Vector& p) {
        e.params().assign(p);
        e.set_power_states(states);
        return empirical_lagrangian(f, e, d, s);
      };
      const auto rep = finite_diff_check(loss, p0, g);
      EXPECT_TRUE(rep.passed()) << "T " << t << " max rel " << rep.max_rel_error;
    }
  }
}

TEST(GradPsi, SingleConstraintProximal) {
  const FlowModel f = small_flow();
  EnergyModel e = small_ebm(0, 7);
  Rng rng(8);
  const FrozenSamples s = frozen(f, rng, 10, 10, 0);
  DualState d;
  d.lambda_prx = 1.0;
  const GradVector g = grad_psi(f, e, d, s);
  const Vector p0 = e.params().values();
  const auto states = e.power_states();
  auto loss = [&](const Vector& p) {
    e.params().assign(p);
    e.set_power_states(states);
    const Vector gx = e.log_density(s.x, {});
    const Vector lw = e.log_density(s.y, {}) - s.y_log_prob;
    return -gx.mean() + log_sum_exp(lw) - std::log(static_cast<double>(lw.size()));
  };
  EXPECT_TRUE(finite_diff_check(loss, p0, g).passed());
}

TEST(GradPsi, IndependentZetaSamplesMatchFiniteDifferences) {
  const FlowModel f = small_flow();
  EnergyModel e = small_ebm(0, 9);
  Rng rng(10);
  const FrozenSamples s = frozen(f, rng, 8, 8, 20);
  const DualState d = random_dual(rng);
  const GradVector g = grad_psi(f, e, d, s);
  const auto states = e.power_states();
  auto loss = [&](const Vector& p) {
    e.params().assign(p);
    e.set_power_states(states);
    return empirical_lagrangian(f, e, d, s);
  };
  const Vector p0 = e.params().values();
  const auto rep = finite_diff_check(loss, p0, g);
  EXPECT_TRUE(rep.passed()) << rep.max_rel_error;
}

TEST(GradTheta, ForwardPartMatchesFiniteDifferences) {
  FlowModel f = small_flow();
  const EnergyModel e = small_ebm();
  Rng rng(11);
  const FrozenSamples s = frozen(f, rng, 12, 12, 0);
  DualState d = random_dual(rng);
  d.lambda_rv = 0.0;
  const GradVector g = grad_theta(f, e, d, s);
  const Vector p0 = f.params().values();
  auto loss = [&](const Vector& p) {
    f.params().assign(p);
    return empirical_lagrangian(f, e, d, s);
  };
  const auto rep = finite_diff_check(loss, p0, g);
  EXPECT_TRUE(rep.passed()) << rep.max_rel_error;
}

TEST(GradTheta, ReducesToNllGradientAndZeroScoreWhenMatched) {
  const FlowModel f = small_flow();
  const EnergyModel e = small_ebm();
  Rng rng(12);
  FrozenSamples s = frozen(f, rng, 6, 6, 0);
  DualState d;
  d.lambda_fw = 0.8;
  GradVector nll = GradVector::Zero(f.params().size());
  f.log_prob_backward(s.x, {}, Vector::Constant(6, -0.8 / 6.0), nll);
  EXPECT_EQ(grad_theta(f, e, d, s), nll);

  // Score coefficients vanish when f(y) / T equals log p(y): use y_log_prob = f(y) / T.
  s.y_log_prob = e.log_density(s.y, {});
  d.lambda_rv = 1.3;
  EXPECT_LT((grad_theta(f, e, d, s) - nll).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GradPsi, OverflowIsReported) {
  const FlowModel f = small_flow();
  const EnergyModel e = small_ebm();
  Rng rng(13);
  FrozenSamples s = frozen(f, rng, 4, 4, 0);
  s.y_log_prob[2] = -1e4;
  DualState d;
  d.lambda_prx = 1;
  try {
    grad_psi(f, e, d, s);
    FAIL();
  } catch (const Error& err) {
    EXPECT_NE(std::string(err.what()).find("max log-weight"), std::string::npos);
  }
}

TEST(TrainStep, LambdaNonNegativeAndDeterministic) {
  TrainConfig cfg;
  cfg.M = 64;
  cfg.lr_lambda = 0.05;
  cfg.lr_norm = 0.05;
  Rng data_rng(14);
  const Matrix x = standard_normal(32, 2, data_rng);
  auto run = [&]() {
    TrainerState st = make_trainer(cfg, small_flow(), small_ebm(), 15);
    std::vector<double> trace;
    for (int i = 0; i < 10; ++i) {
      const auto m = train_step(st, x);
      for (double l : m.dual.lambdas()) {
        EXPECT_GE(l, 0.0);
        trace.push_back(l);
      }
      trace.push_back(m.constraints.log_zeta);
      EXPECT_EQ(m.dual.eps_fw, m.dual.lambda_fw / 2);
    }
    return std::make_pair(trace, st.flow.params().values());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(TrainStep, NegativeNllKeepsDeltaIdentity) {
  TrainConfig cfg;
  cfg.variant = Variant::kNegativeNll;
  cfg.M = 32;
  cfg.lr_lambda = 0.1;
  Rng data_rng(16);
  const Matrix x = 0.1 * standard_normal(16, 2, data_rng);
  TrainerState st = make_trainer(cfg, small_flow(), small_ebm(), 17);
  for (int i = 0; i < 20; ++i) {
    const auto m = train_step(st, x);
    EXPECT_GT(m.dual.lambda_fw, 0.0);
    EXPECT_DOUBLE_EQ(m.dual.delta_fw, 1.0 / (2.0 * m.dual.lambda_fw));
    EXPECT_DOUBLE_EQ(m.dual.delta_ebm, 1.0 / (2.0 * m.dual.lambda_prx));
  }
}

TEST(TrainStep, WeightedSumKeepsLambdaConstant) {
  TrainConfig cfg;
  cfg.mode = TrainMode::kWeightedSum;
  cfg.w_for = 2.0;
  cfg.w_back = 0.5;
  cfg.M = 32;
  Rng data_rng(18);
  const Matrix x = standard_normal(16, 2, data_rng);
  TrainerState st = make_trainer(cfg, small_flow(), small_ebm(), 19);
  for (int i = 0; i < 5; ++i) {
    const auto m = train_step(st, x);
    EXPECT_EQ(m.dual.lambdas(), (std::array<double, 5>{2.0, 0.5, 1.0, 0.0, 0.0}));
    EXPECT_EQ(m.dual.eps_fw, 0.0);
  }
}

TEST(TrainStep, FlowOnlyMatchesPlainNllDescent) {
  TrainConfig cfg;
  cfg.mode = TrainMode::kFlowOnly;
  Rng data_rng(20);
  const Matrix x = standard_normal(16, 2, data_rng);
  TrainerState st = make_trainer(cfg, small_flow(), small_ebm(), 21);
  const Vector psi = st.ebm.params().values();
  FlowModel ref = small_flow();
  Adam adam(ref.params().size(), AdamConfig{});
  for (int i = 0; i < 3; ++i) {
    train_step(st, x);
    GradVector g = GradVector::Zero(ref.params().size());
    ref.log_prob_backward(x, {}, Vector::Constant(16, -1.0 / 16.0), g);
    adam.step(ref.params().values(), g, Direction::kDescent);
  }
  EXPECT_EQ(st.flow.params().values(), ref.params().values());
  EXPECT_EQ(st.ebm.params().values(), psi);
}

TEST(TrainStep, FailureRollsBackState) {
  TrainConfig cfg;
  cfg.M = 16;
  TrainerState st = make_trainer(cfg, small_flow(), small_ebm(), 22);
  Matrix x = Matrix::Zero(4, 2);
  x(1, 1) = NAN;
  const Vector theta = st.flow.params().values();
  const auto states = st.ebm.power_states();
  EXPECT_THROW(train_step(st, x), Error);
  EXPECT_EQ(st.flow.params().values(), theta);
  EXPECT_EQ(st.step, 0);
  EXPECT_EQ(st.ebm.power_states()[0].u, states[0].u);
}

TEST(TrainStep, ConditionalRunsWithFiniteConstraints) {
  TrainConfig cfg;
  cfg.M = 32;
  Rng rng(23);
  const Matrix x = standard_normal(16, 2, rng);
  const Matrix c = standard_normal(16, 2, rng);
  TrainerState st = make_trainer(cfg, small_flow(2), small_ebm(2), 24);
  for (int i = 0; i < 3; ++i) {
    const auto m = train_step(st, x, c);
    EXPECT_TRUE(std::isfinite(m.constraints.reverse_kl));
    EXPECT_TRUE(std::isfinite(m.constraints.nll_ebm));
  }
}

TEST(TrainStep, ZetaRefreshCadenceReusesSamples) {
  TrainConfig cfg;
  cfg.M = 16;
  cfg.zeta_refresh = 3;
  Rng rng(25);
  const Matrix x = standard_normal(8, 2, rng);
  TrainerState st = make_trainer(cfg, small_flow(), small_ebm(), 26);
  train_step(st, x);
  const Matrix first = st.zeta_points;
  train_step(st, x);
  EXPECT_EQ(st.zeta_points, first);
  train_step(st, x);
  EXPECT_EQ(st.zeta_points, first);
  train_step(st, x);
  EXPECT_NE(st.zeta_points, first);
}
