#include "pdflow/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace pdflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

GaussianMixture standardized(GaussianMixture g) {
  g.shift = g.raw_mean();
  g.scale = g.raw_variance().cwiseSqrt();
  return g;
}

GaussianMixture plain(GaussianMixture g) {
  g.shift = RowVector::Zero(g.dim());
  g.scale = RowVector::Ones(g.dim());
  return g;
}

nlohmann::json row_json(const RowVector& r) { return std::vector<double>(r.data(), r.data() + r.size()); }

}  // namespace

Vector GaussianMixture::log_density(const Matrix& x) const {
  if (x.cols() != dim()) throw Error("GaussianMixture: dimension mismatch");
  const Index k = means.rows();
  const auto d = static_cast<double>(dim());
  // p(x') = p_raw(shift + scale * x') * prod(scale)
  const double log_norm = -0.5 * d * kLog2Pi - d * std::log(sigma) - std::log(static_cast<double>(k)) +
                          scale.array().log().sum();
  const Matrix raw = (x.array().rowwise() * scale.array()).matrix().rowwise() + shift;
  Vector out(x.rows());
  Vector terms(k);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index c = 0; c < k; ++c) terms[c] = -0.5 * (raw.row(i) - means.row(c)).squaredNorm() / (sigma * sigma);
    out[i] = log_sum_exp(terms) + log_norm;
  }
  return out;
}

Matrix GaussianMixture::sample(Index n, Rng& rng) const {
  std::uniform_int_distribution<Index> pick(0, means.rows() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, dim());
  for (Index i = 0; i < n; ++i) {
    const Index c = pick(rng);
    for (Index j = 0; j < dim(); ++j) out(i, j) = (means(c, j) + sigma * normal(rng) - shift[j]) / scale[j];
  }
  return out;
}

RowVector GaussianMixture::raw_mean() const { return means.colwise().mean(); }

RowVector GaussianMixture::raw_variance() const {
  const RowVector m = raw_mean();
  return (means.rowwise() - m).array().square().colwise().mean().matrix().array() + sigma * sigma;
}

bool is_synthetic_name(const std::string& name) {
  static const char* names[] = {"gmm40", "rings", "gmm_grid", "gmm_ring", "spiral", "moons"};
  return std::find(std::begin(names), std::end(names), name) != std::end(names);
}

GaussianMixture dataset_mixture(const SyntheticSpec& spec) {
  GaussianMixture g;
  g.sigma = 0.05;
  if (spec.name == "gmm40") {
    Rng rng(derive_seed(spec.seed, 0));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    g.means.resize(40, 2);
    for (Index i = 0; i < 40; ++i) {
      g.means(i, 0) = u(rng);
      g.means(i, 1) = u(rng);
    }
    return plain(g);
  }
  if (spec.name == "gmm_grid") {
    g.means.resize(25, 2);
    for (Index i = 0; i < 5; ++i) {
      for (Index j = 0; j < 5; ++j) g.means.row(i * 5 + j) << -1.0 + 0.5 * static_cast<double>(i), -1.0 + 0.5 * static_cast<double>(j);
    }
    return standardized(g);
  }
  if (spec.name == "gmm_ring") {
    g.means.resize(8, 2);
    for (Index k = 0; k < 8; ++k) {
      const double a = 2.0 * kPi * static_cast<double>(k) / 8.0;
      g.means.row(k) << std::cos(a), std::sin(a);
    }
    return standardized(g);
  }
  throw Error("dataset '" + spec.name + "' has no analytic density");
}

Vector analytic_log_density(const SyntheticSpec& spec, const Matrix& x) {
  return dataset_mixture(spec).log_density(x);
}

Dataset make_dataset(const SyntheticSpec& spec) {
  if (spec.n < 1) throw Error("make_dataset: n must be >= 1");
  if (!is_synthetic_name(spec.name)) throw Error("make_dataset: unknown dataset '" + spec.name + "'");
  Dataset ds;
  ds.metadata = {{"name", spec.name}, {"n", spec.n}, {"seed", spec.seed}};
  Rng rng(derive_seed(spec.seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = spec.n;
  Matrix& x = ds.points;
  x.resize(n, 2);
  if (spec.name == "gmm40" || spec.name == "gmm_grid" || spec.name == "gmm_ring") {
    ds.mixture = dataset_mixture(spec);
    x = ds.mixture->sample(n, rng);
    ds.metadata["sigma"] = ds.mixture->sigma;
    ds.metadata["standardization"] = {{"shift", row_json(ds.mixture->shift)}, {"scale", row_json(ds.mixture->scale)}};
    ds.metadata["components"] = ds.mixture->means.rows();
  } else if (spec.name == "rings") {
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> noise(0.0, 0.1);
    for (Index i = 0; i < n; ++i) {
      RowVector p(2);
      p << normal(rng), normal(rng);
      const double radius = coin(rng) ? 0.2 : 0.6;
      x.row(i) = radius * p / p.norm();
      x(i, 0) += noise(rng);
      x(i, 1) += noise(rng);
    }
    ds.metadata["radii"] = {0.2, 0.6};
    ds.metadata["noise"] = "uniform(0, 0.1) per coordinate";
  } else if (spec.name == "spiral") {
    std::uniform_real_distribution<double> t_dist(0.0, 10.0);
    for (Index i = 0; i < n; ++i) {
      const double t = t_dist(rng);
      x(i, 0) = t * std::cos(t) + 0.02 * normal(rng);
      x(i, 1) = t * std::sin(t) + 0.02 * normal(rng);
    }
    ds.metadata["noise_std"] = 0.02;
  } else {
    // Two interleaving half circles, evenly spaced along each arc, shuffled, plus noise.
    const Index n_out = n / 2;
    const Index n_in = n - n_out;
    auto lin = [](Index k, Index m) { return m > 1 ? kPi * static_cast<double>(k) / static_cast<double>(m - 1) : 0.0; };
    for (Index k = 0; k < n_out; ++k) x.row(k) << std::cos(lin(k, n_out)), std::sin(lin(k, n_out));
    for (Index k = 0; k < n_in; ++k) {
      x.row(n_out + k) << 1.0 - std::cos(lin(k, n_in)), 1.0 - std::sin(lin(k, n_in)) - 0.5;
    }
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(n, 2);
    for (Index i = 0; i < n; ++i) shuffled.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    for (Index i = 0; i < n; ++i) {
      shuffled(i, 0) += spec.moons_noise * normal(rng);
      shuffled(i, 1) += spec.moons_noise * normal(rng);
    }
    x = std::move(shuffled);
    ds.metadata["noise"] = spec.moons_noise;
  }
  return ds;
}

RowVector SbiTask::sample_prior(Rng& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowVector b(prior_lo.size());
  for (Index j = 0; j < b.size(); ++j) b[j] = prior_lo[j] + (prior_hi[j] - prior_lo[j]) * u(rng);
  return b;
}

bool SbiTask::in_prior_support(const RowVector& beta) const {
  return beta.size() == prior_lo.size() && (beta.array() >= prior_lo.array()).all() &&
         (beta.array() <= prior_hi.array()).all();
}

RowVector two_moons_outcome(const RowVector& beta, double alpha, double r) {
  RowVector u(2);
  u << r * std::cos(alpha) + 0.25 - std::abs(beta[0] + beta[1]) / std::sqrt(2.0),
      r * std::sin(alpha) + (-beta[0] + beta[1]) / std::sqrt(2.0);
  return u;
}

RowVector SbiTask::simulate(const RowVector& beta, Rng& rng) const {
  if (beta.size() != 2) throw Error("SbiTask::simulate: parameters must be 2-dimensional");
  std::normal_distribution<double> normal(0.0, 1.0);
  if (name == "two_moons") {
    std::uniform_real_distribution<double> a(-kPi / 2.0, kPi / 2.0);
    const double alpha = a(rng);
    const double r = 0.1 + 0.01 * normal(rng);
    return two_moons_outcome(beta, alpha, r);
  }
  // 0.5 N(beta, I) + 0.5 N(beta, 0.01 I)
  std::bernoulli_distribution coin(0.5);
  const double s = coin(rng) ? 1.0 : 0.1;
  RowVector u(2);
  u[0] = beta[0] + s * normal(rng);
  u[1] = beta[1] + s * normal(rng);
  return u;
}

SbiTask make_sbi_task(const std::string& name) {
  SbiTask t;
  t.name = name;
  t.prior_lo.resize(2);
  t.prior_hi.resize(2);
  t.u0.resize(2);
  if (name == "gaussian_mixture") {
    t.prior_lo << 0.5, 0.5;
    t.prior_hi << 1.0, 1.0;
    t.u0 << 0.75, 0.75;
  } else if (name == "two_moons") {
    t.prior_lo << -1.0, -1.0;
    t.prior_hi << 1.0, 1.0;
    t.u0 << 0.0, 0.0;
  } else {
    throw Error("make_sbi_task: unknown task '" + name + "'");
  }
  return t;
}

Dataset simulate_dataset(const SbiTask& task, Index n, std::uint64_t seed) {
  if (n < 1) throw Error("simulate_dataset: n must be >= 1");
  Rng rng(derive_seed(seed, 2));
  Dataset ds;
  ds.points.resize(n, task.prior_lo.size());
  ds.conditions.resize(n, task.u0.size());
  for (Index i = 0; i < n; ++i) {
    const RowVector b = task.sample_prior(rng);
    ds.points.row(i) = b;
    ds.conditions.row(i) = task.simulate(b, rng);
  }
  ds.metadata = {{"task", task.name},
                 {"n", n},
                 {"seed", seed},
                 {"prior_lo", row_json(task.prior_lo)},
                 {"prior_hi", row_json(task.prior_hi)},
                 {"u0", row_json(task.u0)}};
  return ds;
}

Split train_test_split(const Matrix& points, Index n_train, Index n_test, std::uint64_t seed,
                       const Matrix& conditions) {
  if (n_train < 0 || n_test < 0 || n_train + n_test > points.rows()) {
    throw Error("train_test_split: need " + std::to_string(n_train + n_test) + " points, have " +
                std::to_string(points.rows()));
  }
  const bool has_cond = conditions.size() > 0;
  if (has_cond && conditions.rows() != points.rows()) throw Error("train_test_split: condition count mismatch");
  std::vector<Index> perm(static_cast<std::size_t>(points.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, 3));
  std::shuffle(perm.begin(), perm.end(), rng);
  Split s;
  s.train.resize(n_train, points.cols());
  s.test.resize(n_test, points.cols());
  if (has_cond) {
    s.train_cond.resize(n_train, conditions.cols());
    s.test_cond.resize(n_test, conditions.cols());
  }
  for (Index i = 0; i < n_train + n_test; ++i) {
    const Index src = perm[static_cast<std::size_t>(i)];
    const bool train = i < n_train;
    const Index dst = train ? i : i - n_train;
    (train ? s.train : s.test).row(dst) = points.row(src);
    if (has_cond) (train ? s.train_cond : s.test_cond).row(dst) = conditions.row(src);
  }
  return s;
}

void write_points_csv(const std::string& path, const Matrix& points, const Matrix& conditions) {
  std::ofstream out(path);
  if (!out) throw Error("write_points_csv: cannot open " + path);
  for (Index j = 0; j < points.cols(); ++j) out << (j > 0 ? "," : "") << "x" << j;
  for (Index j = 0; j < conditions.cols(); ++j) out << ",c" << j;
  out << '\n';
  out.precision(17);
  for (Index i = 0; i < points.rows(); ++i) {
    for (Index j = 0; j < points.cols(); ++j) out << (j > 0 ? "," : "") << points(i, j);
    for (Index j = 0; j < conditions.cols(); ++j) out << ',' << conditions(i, j);
    out << '\n';
  }
}

void read_points_csv(const std::string& path, Index dim, Matrix& points, Matrix& conditions) {
  std::ifstream in(path);
  if (!in) throw Error("read_points_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) throw Error("read_points_csv: ragged row in " + path);
    rows.push_back(std::move(row));
  }
  const Index cols = rows.empty() ? dim : static_cast<Index>(rows.front().size());
  if (cols < dim) throw Error("read_points_csv: fewer columns than the point dimension");
  points.resize(static_cast<Index>(rows.size()), dim);
  conditions.resize(static_cast<Index>(rows.size()), cols - dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Index j = 0; j < cols; ++j) {
      const double v = rows[i][static_cast<std::size_t>(j)];
      if (j < dim) {
        points(static_cast<Index>(i), j) = v;
      } else {
        conditions(static_cast<Index>(i), j - dim) = v;
      }
    }
  }
}

}  // namespace pdflow
