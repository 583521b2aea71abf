#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdflow/config.hpp"

namespace pdflow {

inline constexpr int kOutputSchemaVersion = 1;
/// Written into the output directory while a run is in progress and left behind on failure.
inline constexpr const char* kPartialMarker = "RUN_INCOMPLETE";

/// Runs the experiment described by a resolved configuration tree and writes
/// resolved_config.json, metrics.csv, report.json, checkpoints/, data/ and grids/ under
/// `out_dir`. Multi-run experiments put each run under runs/<name>/. Returns the report.
nlohmann::json run_experiment(const nlohmann::json& config, const std::string& out_dir);

/// One run per M with a shared seed; writes msamples.csv (M, lowest flow NLL, lowest EBM NLL,
/// mean step seconds) and msamples.json.
nlohmann::json msamples_study(const nlohmann::json& config, const std::vector<Index>& M_values,
                              const std::string& out_dir);

/// Re-evaluates the final checkpoints of a finished run on its stored test set.
nlohmann::json evaluate_run(const std::string& run_dir, std::uint64_t seed);

enum class SampleSource { kFlow, kEbm };

/// Draws from the final flow, or from the EBM by Langevin dynamics with the run's settings.
/// `cond` is one row (conditional runs) or empty.
Matrix sample_run(const std::string& run_dir, SampleSource source, Index n, const Matrix& cond, std::uint64_t seed);

/// Acceptance radius giving roughly a 1e-3 acceptance rate at the task's default u0.
double default_acceptance_radius(const std::string& task);

/// metrics.csv with the wall_time column dropped, for determinism checks.
std::string metrics_without_wall_time(const std::string& metrics_csv_path);

}  // namespace pdflow
