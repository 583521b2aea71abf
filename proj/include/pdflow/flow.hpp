#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "pdflow/core.hpp"
#include "pdflow/nn.hpp"
#include "pdflow/params.hpp"
#include "pdflow/spline.hpp"

namespace pdflow {

struct FlowConfig {
  Index dim = 2;
  Index cond_dim = 0;
  int transforms = 5;
  int bins = 8;
  double tail_bound = 4.0;
  Index hidden = 64;
  int hidden_layers = 2;
  /// Prepends a learnable elementwise affine map (shift and log-scale per coordinate).
  bool leading_affine = false;
  /// Scale of the conditioners' output-layer initialization; 0 starts at the identity map.
  double output_init_scale = 0.1;
};

/// Coupling flow x = f(z), z ~ N(0, I). Coupling layers alternate which half of the
/// coordinates is transformed by rational-quadratic splines whose parameters are
/// produced by an MLP of the other half (and the condition, if any).
class FlowModel {
 public:
  struct Sample {
    Matrix points;
    Vector log_probs;
  };

  FlowModel() = default;
  FlowModel(const FlowConfig& config, std::uint64_t seed);

  const FlowConfig& config() const { return config_; }
  Index dim() const { return config_.dim; }
  Index cond_dim() const { return config_.cond_dim; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }
  std::size_t num_layers() const { return layers_.size(); }

  /// Log-density by change of variables; `cond` is empty for unconditional models,
  /// otherwise one row per point or a single broadcast row.
  Vector log_prob(const Matrix& x, const Matrix& cond = {}) const;

  /// Same values as log_prob; additionally accumulates sum_i weights_i * d log p(x_i) / d theta.
  Vector log_prob_backward(const Matrix& x, const Matrix& cond, const Vector& weights,
                           GradVector& grad) const;

  Sample sample_with_log_prob(Index n, const Matrix& cond, Rng& rng) const;

  /// Base -> data direction; `log_det` receives log|det df/dz| per row when non-null.
  Matrix forward(const Matrix& z, const Matrix& cond, Vector* log_det = nullptr) const;
  /// Data -> base direction; `log_det` receives log|det df^-1/dx| per row when non-null.
  Matrix inverse(const Matrix& x, const Matrix& cond, Vector* log_det = nullptr) const;

  SplineOptions spline_options() const;

 private:
  struct AffineLayer {
    Index shift_offset = 0;
    Index log_scale_offset = 0;
  };
  struct CouplingLayer {
    std::vector<Index> identity_dims;
    std::vector<Index> transform_dims;
    nn::Mlp conditioner;
  };
  using Layer = std::variant<AffineLayer, CouplingLayer>;

  struct LayerCache {
    Matrix input;  // inverse-direction input of the layer
    Matrix raw;    // conditioner output (coupling only)
    nn::Mlp::Cache mlp;
  };

  Matrix conditioner_input(const CouplingLayer& layer, const Matrix& x, const Matrix& cond) const;
  void check_inputs(const Matrix& x, const Matrix& cond) const;
  Matrix inverse_impl(const Matrix& x, const Matrix& cond, Vector& log_det,
                      std::vector<LayerCache>* caches) const;

  FlowConfig config_;
  ParamVector params_;
  std::vector<Layer> layers_;
};

}  // namespace pdflow
