#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdflow/energy.hpp"
#include "pdflow/flow.hpp"
#include "pdflow/sampling.hpp"
#include "pdflow/trainer.hpp"

namespace pdflow {

inline constexpr int kConfigSchemaVersion = 1;

/// Raised with every problem found, one per line.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Full configuration tree with every key at its default value. Keys that only make sense
/// for one training mode or variant (train.w_for, train.w_back, train.lambda_floor) are absent
/// and may be added only when that mode or variant is selected.
nlohmann::json default_config();

/// JSON with // and /* */ comments allowed.
nlohmann::json parse_config_text(const std::string& text, const std::string& origin);
nlohmann::json load_config_file(const std::string& path);

/// Overlays `patch` onto `base`. Unknown keys are reported, not inserted.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, std::vector<std::string>& problems);
/// Applies "dotted.key=value"; the value is parsed as JSON and taken as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment, std::vector<std::string>& problems);
/// Every violated constraint, or an empty list.
std::vector<std::string> validate_config(const nlohmann::json& config);

/// defaults <- file (if any) <- overrides <- seed; throws ConfigError listing all problems.
nlohmann::json resolve_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                              std::optional<std::uint64_t> seed = std::nullopt);

struct ExperimentConfig {
  std::string experiment;  // density2d | gmm40_compare | sbi | weighted_sum_grid
  std::uint64_t seed = 0;

  std::string dataset;
  Index n_train = 1000;
  Index n_test = 10000;
  std::uint64_t data_seed = 0;
  double moons_noise = 0.05;

  std::string sbi_task;
  Index simulations = 10000;
  Index test_simulations = 1000;
  std::optional<RowVector> u0;
  /// Replace the task's uniform prior box per coordinate.
  std::optional<RowVector> prior_lo;
  std::optional<RowVector> prior_hi;
  double radius = 0.0;  // 0 picks the task default
  Index posterior_samples = 5000;
  double c2st_test_fraction = 0.3;
  bool sbi_langevin = true;

  FlowConfig flow;
  EnergyConfig ebm;
  TrainConfig train;
  int steps = 1;
  Index batch_size = 0;  // 0 means full batch

  WarmStartConfig warm_start;

  int eval_every = 500;
  Index eval_zeta_M = 10000;
  Index grid_resolution = 64;
  bool write_grids = true;
  double grid_padding = 0.1;
  int checkpoint_every = 0;

  LangevinConfig langevin;
  Index langevin_samples = 5000;

  std::vector<std::string> compare_arms;
  std::vector<double> grid_w_for;
  std::vector<double> grid_w_back;
  std::vector<Index> msamples_M;
};

/// Typed view of a validated tree.
ExperimentConfig experiment_config_from_json(const nlohmann::json& config);

TrainMode parse_train_mode(const std::string& s);
std::string to_string(TrainMode m);

}  // namespace pdflow
