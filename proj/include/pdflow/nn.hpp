#pragma once

#include <string>
#include <vector>

#include "pdflow/core.hpp"
#include "pdflow/params.hpp"

// Batched layers with hand-written backward passes. Parameters live in a model's
// ParamVector; layers only remember offsets. Every backward call accumulates
// (+=) into a gradient buffer of the same layout.

namespace pdflow::nn {

/// Persistent left/right singular-vector estimates for spectral normalization.
struct PowerState {
  Vector u;  // output side
  Vector v;  // input side
};

PowerState make_power_state(Index rows, Index cols, Rng& rng);

/// One or more power-iteration updates of `state` for matrix `w`; returns the
/// singular-value estimate u^T w v.
double power_iterate(const Eigen::Ref<const Matrix>& w, PowerState& state, int iterations);

/// w / sigma with sigma = u^T w v from `iterations` power-iteration updates (0 uses
/// the current estimate as is). A zero matrix is returned unchanged with a warning.
Matrix spectral_normalize(const Eigen::Ref<const Matrix>& w, PowerState& state, int iterations = 1);

struct Linear {
  Index in = 0;
  Index out = 0;
  Index w_offset = 0;  // out x in, column-major
  Index b_offset = 0;
  bool spectral = false;
  PowerState power;

  static Linear create(ParamVector& params, const std::string& name, Index in, Index out,
                       bool spectral, Rng& rng);
  /// U(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void init_uniform(ParamVector& params, Rng& rng) const;

  Eigen::Map<const Matrix> weight(const double* p) const { return {p + w_offset, out, in}; }
  Eigen::Map<Matrix> weight(double* p) const { return {p + w_offset, out, in}; }
  Eigen::Map<const Vector> bias(const double* p) const { return {p + b_offset, out}; }
  Eigen::Map<Vector> bias(double* p) const { return {p + b_offset, out}; }

  /// Weight as applied in the forward pass (spectrally normalized when enabled).
  Matrix applied_weight(const double* p) const;
  double sigma(const double* p) const;

  Matrix forward(const double* p, const Matrix& x) const;
  /// Accumulates parameter gradients into `grad`; writes dL/dx when `dx` is non-null.
  void backward(const double* p, const Matrix& x, const Matrix& dy, double* grad, Matrix* dx) const;

  void power_iteration(const double* p, int iterations);
};

struct LayerNorm {
  Index dim = 0;
  Index gain_offset = 0;
  Index bias_offset = 0;
  static constexpr double kEps = 1e-5;

  struct Cache {
    Matrix xhat;
    Vector rstd;
  };

  static LayerNorm create(ParamVector& params, const std::string& name, Index dim);
  void init(ParamVector& params) const;

  Matrix forward(const double* p, const Matrix& x, Cache& cache) const;
  void backward(const double* p, const Cache& cache, const Matrix& dy, double* grad, Matrix& dx) const;
};

Matrix silu(const Matrix& x);
/// dL/dx for y = silu(x).
Matrix silu_backward(const Matrix& x, const Matrix& dy);

/// Linear -> SiLU -> ... -> Linear (no activation after the last layer).
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each linear layer
    std::vector<Matrix> pre;     // pre-activation output of each hidden layer
  };

  Mlp() = default;
  Mlp(ParamVector& params, const std::string& name, const std::vector<Index>& dims, Rng& rng);

  Index in_dim() const { return dims_.front(); }
  Index out_dim() const { return dims_.back(); }
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  void init_uniform(ParamVector& params, Rng& rng) const;

  Matrix forward(const double* p, const Matrix& x) const;
  Matrix forward(const double* p, const Matrix& x, Cache& cache) const;
  void backward(const double* p, const Cache& cache, const Matrix& dy, double* grad, Matrix* dx) const;

 private:
  std::vector<Index> dims_;
  std::vector<Linear> layers_;
};

}  // namespace pdflow::nn
