#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "pdflow/datasets.hpp"
#include "pdflow/eval.hpp"

using namespace pdflow;

namespace {

LogDensityFn standard_normal_2d() {
  return [](const Matrix& x) { return Vector((-0.5 * x.rowwise().squaredNorm()).array() - kLog2Pi); };
}

}  // namespace

TEST(TestNll, StandardNormalAtOrigin) {
  EXPECT_NEAR(test_nll(standard_normal_2d(), Matrix::Zero(1, 2)), 1.837877, 1e-6);
}

TEST(TestNll, AnalyticRingMatchesIndependentEntropyEstimate) {
  const SyntheticSpec spec{"gmm_ring", 10000, 3};
  const auto density = [&](const Matrix& x) { return analytic_log_density(spec, x); };
  const Matrix pts = make_dataset(spec).points;
  const double nll = test_nll(density, pts);
  // Entropy from an independent draw of 10^6 points.
  const Matrix ref = make_dataset({"gmm_ring", 1000000, 99}).points;
  const Vector lp = density(ref);
  const double entropy = -lp.mean();
  const Vector lp_test = density(pts);
  const double se = std::sqrt((lp_test.array() - lp_test.mean()).square().sum() / (lp_test.size() - 1) /
                              static_cast<double>(lp_test.size()));
  EXPECT_NEAR(nll, entropy, 3.0 * se);
}

TEST(TestNll, PermutationInvariant) {
  Rng rng(1);
  Matrix pts = standard_normal(500, 2, rng);
  const double a = test_nll(standard_normal_2d(), pts);
  Matrix shuffled = pts.colwise().reverse();
  EXPECT_NEAR(test_nll(standard_normal_2d(), shuffled), a, 1e-12);
}

TEST(TestNll, NonFiniteReportsIndex) {
  Matrix pts = Matrix::Zero(10, 2);
  pts(7, 0) = 1.0;
  const LogDensityFn bad = [](const Matrix& x) {
    Vector v = Vector::Zero(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
      if (x(i, 0) == 1.0) v[i] = -INFINITY;
    }
    return v;
  };
  try {
    test_nll(bad, pts);
    FAIL() << "expected an error";
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.index(), 7);
  }
}

TEST(TestNll, QuasiNormalizedEbmSubtractsLogZeta) {
  EnergyConfig ec;
  ec.blocks = 1;
  ec.hidden = 8;
  ec.temperature = 0.5;
  const EnergyModel ebm(ec, 2);
  Rng rng(2);
  const Matrix pts = standard_normal(30, 2, rng);
  const Vector f = ebm.energy(pts);
  const double expected = -(f.array() / 0.5 - 0.7).mean();
  EXPECT_NEAR(test_nll(ebm_log_density(ebm, 0.7), pts), expected, 1e-12);
}

TEST(DensityGrid, UniformOverRegionGivesEqualPixels) {
  const Box region{RowVector::Constant(2, -1.0), RowVector::Constant(2, 3.0)};
  const LogDensityFn uniform = [&](const Matrix& x) { return Vector::Constant(x.rows(), -std::log(16.0)); };
  const DensityGrid g = density_grid(uniform, region, 64);
  ASSERT_EQ(g.values.rows(), 64);
  ASSERT_EQ(g.values.cols(), 64);
  for (Index i = 0; i < g.values.size(); ++i) EXPECT_NEAR(g.values.data()[i], 1.0 / 4096.0, 1e-15);
}

TEST(DensityGrid, StandardNormalMassNearOne) {
  const Box region{RowVector::Constant(2, -5.0), RowVector::Constant(2, 5.0)};
  EXPECT_NEAR(density_grid(standard_normal_2d(), region, 64).mass(), 1.0, 1e-3);
}

TEST(DensityGrid, ScalingDensityScalesPixels) {
  const Box region{RowVector::Constant(2, -3.0), RowVector::Constant(2, 3.0)};
  const LogDensityFn scaled = [](const Matrix& x) {
    return Vector((-0.5 * x.rowwise().squaredNorm()).array() - kLog2Pi + std::log(3.0));
  };
  const DensityGrid a = density_grid(standard_normal_2d(), region, 32);
  const DensityGrid b = density_grid(scaled, region, 32);
  EXPECT_TRUE(b.values.isApprox(3.0 * a.values, 1e-12));
}

TEST(DensityGrid, RowIndexRunsAlongSecondCoordinate) {
  const Box region{RowVector::Zero(2), RowVector::Ones(2)};
  // Density increasing in x1 only.
  const LogDensityFn fn = [](const Matrix& x) { return Vector(x.col(1)); };
  const DensityGrid g = density_grid(fn, region, 8);
  EXPECT_GT(g.values(7, 0), g.values(0, 0));
  EXPECT_NEAR(g.values(3, 0), g.values(3, 7), 1e-15);
}

TEST(DensityGrid, PaddedBoundingBox) {
  Matrix pts(2, 2);
  pts << 0, 0, 10, 20;
  const Box b = padded_bounding_box(pts, 0.1);
  EXPECT_NEAR(b.lo[0], -1.0, 1e-12);
  EXPECT_NEAR(b.hi[0], 11.0, 1e-12);
  EXPECT_NEAR(b.lo[1], -2.0, 1e-12);
  EXPECT_NEAR(b.hi[1], 22.0, 1e-12);
}

TEST(DensityGrid, WritesCsvAndMetadata) {
  const Box region{RowVector::Constant(2, -2.0), RowVector::Constant(2, 2.0)};
  const DensityGrid g = density_grid(standard_normal_2d(), region, 4);
  const auto dir = std::filesystem::temp_directory_path();
  const auto csv = (dir / "pdflow_grid_test.csv").string();
  const auto meta = (dir / "pdflow_grid_test.json").string();
  write_grid(g, csv, meta, {{"model", "normal"}});
  std::ifstream in(csv);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  EXPECT_EQ(rows, 4);
  std::ifstream jm(meta);
  const auto j = nlohmann::json::parse(jm);
  EXPECT_EQ(j.at("resolution").get<int>(), 4);
  EXPECT_EQ(j.at("model").get<std::string>(), "normal");
  std::filesystem::remove(csv);
  std::filesystem::remove(meta);
}

TEST(C2st, SameDistributionNearChance) {
  Rng rng(3);
  const Matrix a = standard_normal(5000, 2, rng);
  const Matrix b = standard_normal(5000, 2, rng);
  const C2stReport r = c2st(a, b, 1);
  EXPECT_GE(r.accuracy, 0.47);
  EXPECT_LE(r.accuracy, 0.53);
  EXPECT_EQ(r.n_truth, 5000);
  EXPECT_DOUBLE_EQ(r.test_fraction, 0.3);
}

TEST(C2st, DisjointSupportsSeparable) {
  Rng rng(4);
  const Matrix a = (standard_normal(2000, 2, rng).array() - 10.0).matrix();
  const Matrix b = (standard_normal(2000, 2, rng).array() + 10.0).matrix();
  EXPECT_GT(c2st(a, b, 2).accuracy, 0.99);
}

TEST(C2st, DegenerateInputsAreErrors) {
  Rng rng(5);
  const Matrix a = standard_normal(1, 2, rng);
  const Matrix b = standard_normal(1, 2, rng);
  EXPECT_THROW(c2st(a, b, 0), Error);
  EXPECT_THROW(c2st(a, Matrix(0, 2), 0), Error);
  C2stOptions bad;
  bad.test_fraction = 1.5;
  EXPECT_THROW(c2st(standard_normal(50, 2, rng), standard_normal(50, 2, rng), 0, bad), Error);
}

TEST(C2st, Deterministic) {
  Rng rng(6);
  const Matrix a = standard_normal(400, 2, rng);
  const Matrix b = (standard_normal(400, 2, rng).array() * 1.5).matrix();
  EXPECT_EQ(c2st(a, b, 7).accuracy, c2st(a, b, 7).accuracy);
}
