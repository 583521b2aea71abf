#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pdflow/core.hpp"
#include "pdflow/nn.hpp"
#include "pdflow/params.hpp"

namespace pdflow {

class FlowModel;

/// Anything that provides an unnormalized log-density log q~(x) and its x-gradient.
class UnnormalizedDensity {
 public:
  virtual ~UnnormalizedDensity() = default;
  virtual Index dim() const = 0;
  virtual Index cond_dim() const { return 0; }
  virtual Vector log_density(const Matrix& x, const Matrix& cond) const = 0;
  /// d log_density / dx, one row per point.
  virtual Matrix grad_log_density(const Matrix& x, const Matrix& cond) const = 0;
};

struct EnergyConfig {
  Index dim = 2;
  Index hidden = 64;
  int blocks = 6;
  double temperature = 1.0;
  Index cond_dim = 0;
  /// Linear layers in each of the FiLM scale and shift networks.
  int film_layers = 2;
  bool spectral_norm = true;
  /// Power-iteration updates performed at construction.
  int init_power_iterations = 1000;
};

/// Residual-MLP energy f(x); the model density is exp(f(x) / T) / zeta.
///
/// Layout: Linear(dim->h, spectral) -> SiLU -> blocks -> Linear(h->1).
/// Block: LN -> SiLU -> Linear(spectral) -> LN -> SiLU -> Linear(spectral) = path;
/// out = SiLU(alpha * x + path), or SiLU(alpha * x + gamma(c) * path + beta(c)) with FiLM.
class EnergyModel final : public UnnormalizedDensity {
 public:
  EnergyModel() = default;
  EnergyModel(const EnergyConfig& config, std::uint64_t seed);

  const EnergyConfig& config() const { return config_; }
  Index dim() const override { return config_.dim; }
  Index cond_dim() const override { return config_.cond_dim; }
  double temperature() const { return config_.temperature; }
  void set_temperature(double t);
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  /// f(x) per row.
  Vector energy(const Matrix& x, const Matrix& cond = {}) const;
  /// f(x) per row; accumulates sum_i w_i df(x_i)/dpsi into `grad` and writes
  /// w_i df(x_i)/dx into `grad_x` when the respective pointers are non-null.
  Vector energy_backward(const Matrix& x, const Matrix& cond, const Vector& weights,
                         GradVector* grad, Matrix* grad_x) const;

  /// Activations of one forward pass, kept so several backward passes can share it.
  class Tape;
  /// f(x) per row, recording the activations into `tape`.
  Vector energy(const Matrix& x, const Matrix& cond, Tape& tape) const;
  /// Same accumulation as energy_backward, replaying a recorded pass.
  void backward(const Tape& tape, const Vector& weights, GradVector* grad, Matrix* grad_x) const;

  /// f(x) / T.
  Vector log_density(const Matrix& x, const Matrix& cond) const override;
  Matrix grad_log_density(const Matrix& x, const Matrix& cond) const override;

  /// One power-iteration update of every spectrally normalized layer.
  void power_iteration(int iterations = 1);
  /// Weights as applied in the forward pass, for every spectrally normalized layer.
  std::vector<Matrix> normalized_weights() const;
  /// Power-iteration vectors, in layer order (for checkpoints).
  std::vector<nn::PowerState> power_states() const;
  void set_power_states(const std::vector<nn::PowerState>& states);

  /// Zeroes the output layer so that f == 0.
  void zero_output_layer();
  /// Sets every FiLM network so that gamma == 1 and beta == 0 for all conditions.
  void set_identity_film();

 private:
  struct Block {
    nn::LayerNorm ln1;
    nn::Linear lin1;
    nn::LayerNorm ln2;
    nn::Linear lin2;
    Index alpha_offset = 0;
    std::optional<nn::Mlp> film_scale;
    std::optional<nn::Mlp> film_shift;
  };
  struct BlockCache {
    Matrix input;
    nn::LayerNorm::Cache ln1;
    Matrix n1;
    Matrix s1;
    Matrix l1;
    nn::LayerNorm::Cache ln2;
    Matrix n2;
    Matrix s2;
    Matrix l2;
    Matrix gamma;
    Matrix pre;
    nn::Mlp::Cache scale_cache;
    nn::Mlp::Cache shift_cache;
  };
  struct Cache {
    Matrix h0;
    std::vector<BlockCache> blocks;
    Matrix last;
  };

  void check_inputs(const Matrix& x, const Matrix& cond) const;
  Vector forward(const Matrix& x, const Matrix& cond, Cache* cache) const;
  std::vector<nn::Linear*> spectral_layers();
  std::vector<const nn::Linear*> spectral_layers() const;

  void backward_cached(const Matrix& x, const Cache& cache, const Vector& weights, GradVector* grad,
                       Matrix* grad_x) const;

  EnergyConfig config_;
  ParamVector params_;
  nn::Linear input_;
  std::vector<Block> blocks_;
  nn::Linear head_;
};

class EnergyModel::Tape {
 private:
  friend class EnergyModel;
  Matrix x;
  Cache cache;
};

struct WarmStartConfig {
  int iterations = 1000;
  Index batch = 256;
  double lr = 1e-3;
  int check_every = 50;
  Index heldout = 1024;
  /// Consecutive increases of the held-out error that count as divergence.
  int divergence_patience = 10;
};

struct WarmStartReport {
  double initial_mse = 0.0;
  double final_mse = 0.0;
  std::vector<double> heldout_mse;
};

/// Regresses f(y) / T onto log p_theta(y) for fresh flow samples y. For conditional
/// models, each sample draws its condition from the rows of `conditions`.
WarmStartReport warm_start_fit(EnergyModel& ebm, const FlowModel& flow, const WarmStartConfig& config,
                               Rng& rng, const Matrix& conditions = {});

}  // namespace pdflow
