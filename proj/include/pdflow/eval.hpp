#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include <nlohmann/json.hpp>

#include "pdflow/core.hpp"
#include "pdflow/energy.hpp"
#include "pdflow/flow.hpp"
#include "pdflow/partition.hpp"

namespace pdflow {

/// Normalized (or quasi-normalized) log-density of a batch of points.
using LogDensityFn = std::function<Vector(const Matrix&)>;

LogDensityFn flow_log_density(const FlowModel& flow, const Matrix& cond = {});
/// Quasi-normalized EBM density: f(x) / T - log zeta_hat.
LogDensityFn ebm_log_density(const EnergyModel& ebm, double log_zeta, const Matrix& cond = {});

/// Mean negative log-likelihood; evaluated in chunks.
double test_nll(const LogDensityFn& log_density, const Matrix& points);

struct DensityGrid {
  Box region;
  Index resolution = 64;
  /// values(r, c) = p(center) * pixel area; row r runs along the second coordinate.
  Matrix values;

  double mass() const { return values.sum(); }
};

DensityGrid density_grid(const LogDensityFn& log_density, const Box& region, Index resolution = 64);

/// Bounding box of `points` padded by `padding` times its extent on each side.
Box padded_bounding_box(const Matrix& points, double padding = 0.1);

void write_grid(const DensityGrid& grid, const std::string& csv_path, const std::string& json_path,
                const nlohmann::json& extra = {});

struct C2stOptions {
  double test_fraction = 0.3;
  /// Share of the training portion held out for early stopping.
  double validation_fraction = 0.2;
  Index hidden = 64;
  int max_epochs = 100;
  int patience = 10;
  Index batch_size = 128;
  double lr = 1e-3;
};

struct C2stReport {
  double accuracy = 0.0;
  Index n_truth = 0;
  Index n_model = 0;
  double test_fraction = 0.3;
  int epochs = 0;
  std::string classifier;
};

/// Classifier two-sample test: held-out accuracy of an MLP separating the two sets.
C2stReport c2st(const Matrix& truth, const Matrix& model, std::uint64_t seed, const C2stOptions& options = {});

}  // namespace pdflow
