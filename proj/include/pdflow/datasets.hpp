#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "pdflow/core.hpp"

namespace pdflow {

/// Isotropic Gaussian mixture with equal weights, optionally followed by a per-coordinate
/// standardization x' = (x - shift) / scale.
struct GaussianMixture {
  Matrix means;
  double sigma = 0.05;
  RowVector shift;
  RowVector scale;

  Index dim() const { return means.cols(); }
  /// Exact log-density in the (standardized) output space.
  Vector log_density(const Matrix& x) const;
  Matrix sample(Index n, Rng& rng) const;
  /// Exact per-coordinate mean and variance of the unstandardized mixture.
  RowVector raw_mean() const;
  RowVector raw_variance() const;
};

struct SyntheticSpec {
  std::string name;  // gmm40 | rings | gmm_grid | gmm_ring | spiral | moons
  Index n = 1000;
  std::uint64_t seed = 0;
  double moons_noise = 0.05;
};

struct Dataset {
  Matrix points;
  /// Conditions, one row per point (simulation-based inference only).
  Matrix conditions;
  std::optional<GaussianMixture> mixture;
  nlohmann::json metadata;
};

bool is_synthetic_name(const std::string& name);

/// Draws `spec.n` points. GMM-family datasets carry their exact mixture density.
Dataset make_dataset(const SyntheticSpec& spec);

/// Mixture parameters of a GMM-family dataset (gmm40 centers depend on the seed).
GaussianMixture dataset_mixture(const SyntheticSpec& spec);

/// Exact log-density of a GMM-family dataset, standardization included.
Vector analytic_log_density(const SyntheticSpec& spec, const Matrix& x);

struct SbiTask {
  std::string name;  // gaussian_mixture | two_moons
  RowVector prior_lo;
  RowVector prior_hi;
  RowVector u0;

  RowVector sample_prior(Rng& rng) const;
  bool in_prior_support(const RowVector& beta) const;
  RowVector simulate(const RowVector& beta, Rng& rng) const;
};

SbiTask make_sbi_task(const std::string& name);

/// Two-moons simulator with its noise (alpha, r) given explicitly.
RowVector two_moons_outcome(const RowVector& beta, double alpha, double r);

/// (beta_i ~ prior, u_i ~ simulator(beta_i)) pairs; points hold beta, conditions hold u.
Dataset simulate_dataset(const SbiTask& task, Index n, std::uint64_t seed);

struct Split {
  Matrix train;
  Matrix test;
  Matrix train_cond;
  Matrix test_cond;
};

/// Seeded disjoint split of the rows (conditions follow their points when present).
Split train_test_split(const Matrix& points, Index n_train, Index n_test, std::uint64_t seed,
                       const Matrix& conditions = {});

/// CSV with a header row; condition columns follow the point columns.
void write_points_csv(const std::string& path, const Matrix& points, const Matrix& conditions = {});
/// Reads a CSV written by write_points_csv; the first `dim` columns are points, the rest conditions.
void read_points_csv(const std::string& path, Index dim, Matrix& points, Matrix& conditions);

}  // namespace pdflow
