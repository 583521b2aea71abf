#include <gtest/gtest.h>

#include <random>

#include "pdflow/flow.hpp"
#include "pdflow/optim.hpp"
#include "pdflow/spline.hpp"

using namespace pdflow;

namespace {

std::vector<double> random_raw(int bins, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> raw(static_cast<std::size_t>(3 * bins - 1));
  for (auto& r : raw) r = n(rng);
  return raw;
}

FlowModel random_flow(Index dim, Index cond_dim, std::uint64_t seed, double scale = 1.0) {
  FlowConfig c;
  c.dim = dim;
  c.cond_dim = cond_dim;
  c.transforms = 3;
  c.hidden = 16;
  c.output_init_scale = scale;
  return FlowModel(c, seed);
}

}  // namespace

TEST(Spline, IdentityIsIdentity) {
  const auto p = SplineTransformParams::identity(8, 4.0);
  for (double x : {-4.0, -2.3, 0.0, 1.7, 3.99, 4.0}) {
    const auto r = spline_forward(x, p);
    EXPECT_NEAR(r.value, x, 1e-12);
    EXPECT_NEAR(r.log_det, 0.0, 1e-12);
  }
  EXPECT_NEAR(spline_inverse(0.7, p).value, 0.7, 1e-12);
}

TEST(Spline, ZeroRawIsIdentity) {
  SplineOptions o;
  const std::vector<double> raw(static_cast<std::size_t>(o.raw_size()), 0.0);
  const auto p = SplineTransformParams::from_unconstrained(raw, o);
  for (double x : {-3.3, 0.1, 2.5}) {
    EXPECT_NEAR(spline_forward(x, p).value, x, 1e-12);
    EXPECT_NEAR(spline_forward(x, p).log_det, 0.0, 1e-12);
  }
}

TEST(Spline, LinearTails) {
  Rng rng(1);
  SplineOptions o;
  const auto p = SplineTransformParams::from_unconstrained(random_raw(8, rng), o);
  for (double x : {-5.0, 5.0, 17.0}) {
    const auto r = spline_forward(x, p);
    EXPECT_EQ(r.value, x);
    EXPECT_EQ(r.log_det, 0.0);
  }
}

TEST(Spline, ParamsSatisfyInvariants) {
  Rng rng(2);
  SplineOptions o;
  const auto p = SplineTransformParams::from_unconstrained(random_raw(8, rng, 3.0), o);
  EXPECT_NO_THROW(p.validate());
  double ws = 0;
  for (double w : p.widths) ws += w;
  EXPECT_NEAR(ws, 8.0, 1e-12);
  EXPECT_EQ(p.derivatives.front(), 1.0);
  EXPECT_EQ(p.derivatives.back(), 1.0);
  auto bad = p;
  bad.widths[0] = NAN;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_THROW(spline_forward(0.0, bad), Error);
}

TEST(Spline, LogDetMatchesNumericDerivative) {
  Rng rng(3);
  SplineOptions o;
  std::uniform_real_distribution<double> u(-3.9, 3.9);
  for (int k = 0; k < 20; ++k) {
    const auto p = SplineTransformParams::from_unconstrained(random_raw(8, rng), o);
    const double x = u(rng);
    const double h = 1e-6;
    const double num = (spline_forward(x + h, p).value - spline_forward(x - h, p).value) / (2 * h);
    EXPECT_NEAR(num / std::exp(spline_forward(x, p).log_det), 1.0, 1e-5);
  }
}

TEST(Spline, RoundTripAndLogDetsCancel) {
  Rng rng(4);
  SplineOptions o;
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  double max_err = 0.0;
  double max_ld = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto p = SplineTransformParams::from_unconstrained(random_raw(8, rng, 2.0), o);
    const double y = u(rng);
    const auto inv = spline_inverse(y, p);
    const auto fwd = spline_forward(inv.value, p);
    max_err = std::max(max_err, std::abs(fwd.value - y));
    max_ld = std::max(max_ld, std::abs(fwd.log_det + inv.log_det));
  }
  EXPECT_LT(max_err, 1e-8);
  EXPECT_LT(max_ld, 1e-8);
}

TEST(Spline, MonotoneIncreasing) {
  Rng rng(5);
  SplineOptions o;
  const auto p = SplineTransformParams::from_unconstrained(random_raw(8, rng, 3.0), o);
  double prev = -INFINITY;
  for (double x = -4.5; x <= 4.5; x += 0.001) {
    const double y = spline_forward(x, p).value;
    EXPECT_GT(y, prev);
    prev = y;
  }
}

TEST(Spline, InverseBackwardMatchesFiniteDifferences) {
  Rng rng(6);
  SplineOptions o;
  for (int k = 0; k < 10; ++k) {
    const auto raw0 = random_raw(8, rng);
    std::uniform_real_distribution<double> u(-3.5, 3.5);
    const double y = u(rng);
    const double a = 0.7;
    const double b = -1.3;
    auto loss = [&](const Vector& v) {
      std::vector<double> raw(v.data() + 1, v.data() + v.size());
      const auto r = spline_inverse(v[0], SplineTransformParams::from_unconstrained(raw, o));
      return a * r.value + b * r.log_det;
    };
    Vector v(1 + static_cast<Index>(raw0.size()));
    v[0] = y;
    for (std::size_t i = 0; i < raw0.size(); ++i) v[static_cast<Index>(i) + 1] = raw0[i];
    std::vector<double> d_raw(raw0.size(), 0.0);
    Vector analytic(v.size());
    analytic[0] = spline_inverse_backward(y, raw0, o, a, b, d_raw);
    for (std::size_t i = 0; i < raw0.size(); ++i) analytic[static_cast<Index>(i) + 1] = d_raw[i];
    const auto rep = finite_diff_check(loss, v, analytic);
    EXPECT_TRUE(rep.passed()) << "max rel " << rep.max_rel_error;
  }
}

TEST(Flow, IdentityFlowStandardNormalDensity) {
  const FlowModel f = random_flow(2, 0, 1, 0.0);
  Matrix x = Matrix::Zero(1, 2);
  EXPECT_NEAR(f.log_prob(x)[0], -std::log(2 * M_PI), 1e-12);
  EXPECT_NEAR(f.log_prob(x)[0], -1.837877, 1e-6);
}

TEST(Flow, QuadratureNormalization2D) {
  const FlowModel f = random_flow(2, 0, 7, 1.0);
  const double lo = -7.0;
  const double hi = 7.0;
  const Index n = 281;
  const double h = (hi - lo) / static_cast<double>(n - 1);
  Matrix pts(n * n, 2);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) pts.row(i * n + j) << lo + h * static_cast<double>(i), lo + h * static_cast<double>(j);
  }
  const Vector p = f.log_prob(pts).array().exp();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double w = ((i == 0 || i == n - 1) ? 0.5 : 1.0) * ((j == 0 || j == n - 1) ? 0.5 : 1.0);
      total += w * p[i * n + j];
    }
  }
  EXPECT_NEAR(total * h * h, 1.0, 1e-3);
}

TEST(Flow, QuadratureNormalization1D) {
  FlowConfig c;
  c.dim = 1;
  c.transforms = 2;
  c.hidden = 8;
  c.output_init_scale = 1.0;
  const FlowModel f(c, 9);
  const Index n = 20001;
  const Matrix x = Vector::LinSpaced(n, -10, 10);
  const Vector p = f.log_prob(x).array().exp();
  const double h = 20.0 / static_cast<double>(n - 1);
  const double total = h * (p.sum() - 0.5 * (p[0] + p[n - 1]));
  EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(Flow, RoundTrip) {
  const FlowModel f = random_flow(3, 0, 11, 1.0);
  Rng rng(12);
  const Matrix z = 2.0 * standard_normal(2000, 3, rng);
  Vector ld_f;
  Vector ld_i;
  const Matrix x = f.forward(z, {}, &ld_f);
  const Matrix back = f.inverse(x, {}, &ld_i);
  EXPECT_LT((back - z).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((ld_f + ld_i).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Flow, LogDetMatchesNumericJacobian) {
  const FlowModel f = random_flow(2, 0, 13, 1.0);
  Rng rng(14);
  const Matrix x = standard_normal(10, 2, rng);
  Vector ld;
  f.inverse(x, {}, &ld);
  const double h = 1e-6;
  for (Index i = 0; i < x.rows(); ++i) {
    Eigen::Matrix2d j;
    for (int c = 0; c < 2; ++c) {
      Matrix xp = x.row(i);
      Matrix xm = x.row(i);
      xp(0, c) += h;
      xm(0, c) -= h;
      j.col(c) = ((f.inverse(xp, {}) - f.inverse(xm, {})) / (2 * h)).transpose();
    }
    EXPECT_NEAR(std::log(std::abs(j.determinant())), ld[i], 1e-4);
  }
}

TEST(Flow, SamplesMatchLogProbAndAreDeterministic) {
  const FlowModel f = random_flow(2, 0, 15, 1.0);
  Rng r1(99);
  Rng r2(99);
  const auto a = f.sample_with_log_prob(500, {}, r1);
  const auto b = f.sample_with_log_prob(500, {}, r2);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.log_probs, b.log_probs);
  EXPECT_LT((a.log_probs - f.log_prob(a.points)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Flow, IdentityFlowSamplesAreStandardNormal) {
  const FlowModel f = random_flow(2, 0, 16, 0.0);
  Rng rng(17);
  const Index n = 20000;
  const auto s = f.sample_with_log_prob(n, {}, rng);
  const RowVector mean = s.points.colwise().mean();
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Flow, ConditionalLogProbDependsOnCondition) {
  const FlowModel f = random_flow(2, 2, 18, 1.0);
  Matrix x(1, 2);
  x << 0.3, -0.4;
  Matrix c1(1, 2);
  c1 << 0.0, 0.0;
  Matrix c2(1, 2);
  c2 << 1.0, -2.0;
  EXPECT_GT(std::abs(f.log_prob(x, c1)[0] - f.log_prob(x, c2)[0]), 1e-6);
  EXPECT_THROW(f.log_prob(x), Error);
  EXPECT_THROW(random_flow(2, 0, 1).log_prob(x, c1), Error);
  EXPECT_THROW(f.log_prob(Matrix::Zero(1, 3), c1), Error);
}

TEST(Flow, ParameterGradientMatchesFiniteDifferences) {
  for (Index cond_dim : {0, 2}) {
    FlowModel f = random_flow(2, cond_dim, 19 + static_cast<std::uint64_t>(cond_dim), 1.0);
    Rng rng(20);
    const Matrix x = 1.5 * standard_normal(16, 2, rng);
    const Matrix c = cond_dim > 0 ? standard_normal(16, cond_dim, rng) : Matrix();
    const Vector w = Vector::Constant(16, 1.0 / 16.0);
    GradVector g = GradVector::Zero(f.params().size());
    f.log_prob_backward(x, c, w, g);
    const Vector p0 = f.params().values();
    auto loss = [&](const Vector& p) {
      f.params().assign(p);
      const double v = f.log_prob(x, c).mean();
      return v;
    };
    const auto rep = finite_diff_check(loss, p0, g);
    f.params().assign(p0);
    EXPECT_TRUE(rep.passed()) << "failures " << rep.failures.size() << " max rel " << rep.max_rel_error;
  }
}

TEST(Flow, AffineLayerGradientAndDensity) {
  FlowConfig c;
  c.dim = 1;
  c.transforms = 0;
  c.leading_affine = true;
  FlowModel f(c, 1);
  f.params().values() << 0.5, std::log(2.0);
  Matrix x(1, 1);
  x << 1.5;
  // x = 0.5 + 2 z, z = 0.5: log N(0.5) - log 2.
  EXPECT_NEAR(f.log_prob(x)[0], -0.5 * 0.25 - 0.5 * std::log(2 * M_PI) - std::log(2.0), 1e-12);
  GradVector g = GradVector::Zero(2);
  f.log_prob_backward(x, {}, Vector::Ones(1), g);
  // d/dmu = z / s = 0.25; d/dlog s = z^2 - 1 = -0.75.
  EXPECT_NEAR(g[0], 0.25, 1e-12);
  EXPECT_NEAR(g[1], -0.75, 1e-12);
}
