#include "pdflow/energy.hpp"

#include "pdflow/flow.hpp"
#include "pdflow/optim.hpp"

namespace pdflow {

namespace {

void check_block_finite(const Matrix& m, std::size_t block) {
  for (Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.data()[i])) {
      throw NonFiniteError("EnergyModel: non-finite activation in block " + std::to_string(block), i);
    }
  }
}

}  // namespace

EnergyModel::EnergyModel(const EnergyConfig& config, std::uint64_t seed) : config_(config) {
  if (config_.dim < 1 || config_.hidden < 1 || config_.blocks < 0 || config_.cond_dim < 0) {
    throw Error("EnergyModel: invalid configuration");
  }
  if (!(config_.temperature > 0.0)) throw Error("EnergyModel: temperature must be positive");
  if (config_.cond_dim > 0 && config_.film_layers < 1) throw Error("EnergyModel: FiLM needs at least one layer");
  Rng rng(derive_seed(seed, 0xE7B));
  const bool sn = config_.spectral_norm;
  const Index h = config_.hidden;
  input_ = nn::Linear::create(params_, "input", config_.dim, h, sn, rng);
  for (int b = 0; b < config_.blocks; ++b) {
    const std::string name = "block" + std::to_string(b);
    Block blk;
    blk.ln1 = nn::LayerNorm::create(params_, name + ".ln1", h);
    blk.lin1 = nn::Linear::create(params_, name + ".lin1", h, h, sn, rng);
    blk.ln2 = nn::LayerNorm::create(params_, name + ".ln2", h);
    blk.lin2 = nn::Linear::create(params_, name + ".lin2", h, h, sn, rng);
    blk.alpha_offset = params_.add(name + ".alpha", 1);
    params_.values()[blk.alpha_offset] = 1.0;
    if (config_.cond_dim > 0) {
      std::vector<Index> dims{config_.cond_dim};
      for (int k = 0; k < config_.film_layers; ++k) dims.push_back(h);
      blk.film_scale = nn::Mlp(params_, name + ".film_scale", dims, rng);
      blk.film_shift = nn::Mlp(params_, name + ".film_shift", dims, rng);
      // Start near unit scale.
      blk.film_scale->layers().back().bias(params_.data()).array() += 1.0;
    }
    blocks_.push_back(std::move(blk));
  }
  head_ = nn::Linear::create(params_, "head", h, 1, false, rng);
  params_.seal();
  power_iteration(config_.init_power_iterations);
}

void EnergyModel::set_temperature(double t) {
  if (!(t > 0.0)) throw Error("EnergyModel: temperature must be positive");
  config_.temperature = t;
}

std::vector<nn::Linear*> EnergyModel::spectral_layers() {
  std::vector<nn::Linear*> out;
  if (input_.spectral) out.push_back(&input_);
  for (auto& b : blocks_) {
    if (b.lin1.spectral) out.push_back(&b.lin1);
    if (b.lin2.spectral) out.push_back(&b.lin2);
  }
  return out;
}

std::vector<const nn::Linear*> EnergyModel::spectral_layers() const {
  std::vector<const nn::Linear*> out;
  for (auto* l : const_cast<EnergyModel*>(this)->spectral_layers()) out.push_back(l);
  return out;
}

void EnergyModel::power_iteration(int iterations) {
  for (auto* l : spectral_layers()) l->power_iteration(params_.data(), iterations);
}

std::vector<Matrix> EnergyModel::normalized_weights() const {
  std::vector<Matrix> out;
  for (const auto* l : spectral_layers()) out.push_back(l->applied_weight(params_.data()));
  return out;
}

std::vector<nn::PowerState> EnergyModel::power_states() const {
  std::vector<nn::PowerState> out;
  for (const auto* l : spectral_layers()) out.push_back(l->power);
  return out;
}

void EnergyModel::set_power_states(const std::vector<nn::PowerState>& states) {
  auto layers = spectral_layers();
  if (states.size() != layers.size()) throw Error("EnergyModel: power-state count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (states[i].u.size() != layers[i]->out || states[i].v.size() != layers[i]->in) {
      throw Error("EnergyModel: power-state shape mismatch");
    }
    layers[i]->power = states[i];
  }
}

void EnergyModel::zero_output_layer() {
  head_.weight(params_.data()).setZero();
  head_.bias(params_.data()).setZero();
}

void EnergyModel::set_identity_film() {
  for (auto& b : blocks_) {
    if (!b.film_scale) continue;
    for (auto* net : {&*b.film_scale, &*b.film_shift}) {
      auto& last = net->layers().back();
      last.weight(params_.data()).setZero();
      last.bias(params_.data()).setZero();
    }
    b.film_scale->layers().back().bias(params_.data()).setOnes();
  }
}

void EnergyModel::check_inputs(const Matrix& x, const Matrix& cond) const {
  if (x.cols() != config_.dim) {
    throw Error("EnergyModel: expected points of dimension " + std::to_string(config_.dim) + ", got " +
                std::to_string(x.cols()));
  }
  if (!condition_matches(cond, x.rows(), config_.cond_dim)) {
    throw Error(config_.cond_dim == 0 ? "EnergyModel: unconditional model given a condition"
                                      : "EnergyModel: condition missing or of the wrong shape");
  }
  require_finite(x, "EnergyModel: non-finite input");
}

Vector EnergyModel::forward(const Matrix& x, const Matrix& cond, Cache* cache) const {
  const double* p = params_.data();
  const Index n = x.rows();
  const Matrix c = config_.cond_dim > 0 ? broadcast_rows(cond, n) : Matrix();
  Matrix h0 = input_.forward(p, x);
  Matrix h = nn::silu(h0);
  if (cache != nullptr) {
    cache->h0 = std::move(h0);
    cache->blocks.assign(blocks_.size(), BlockCache{});
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    BlockCache local;
    BlockCache& bc = cache != nullptr ? cache->blocks[b] : local;
    bc.input = h;
    bc.n1 = blk.ln1.forward(p, h, bc.ln1);
    bc.s1 = nn::silu(bc.n1);
    bc.l1 = blk.lin1.forward(p, bc.s1);
    bc.n2 = blk.ln2.forward(p, bc.l1, bc.ln2);
    bc.s2 = nn::silu(bc.n2);
    bc.l2 = blk.lin2.forward(p, bc.s2);
    const double alpha = p[blk.alpha_offset];
    if (blk.film_scale) {
      bc.gamma = blk.film_scale->forward(p, c, bc.scale_cache);
      const Matrix shift = blk.film_shift->forward(p, c, bc.shift_cache);
      bc.pre = alpha * h + bc.gamma.cwiseProduct(bc.l2) + shift;
    } else {
      bc.pre = alpha * h + bc.l2;
    }
    h = nn::silu(bc.pre);
    check_block_finite(h, b);
  }
  Vector f = head_.forward(p, h).col(0);
  if (cache != nullptr) cache->last = std::move(h);
  require_finite(f, "EnergyModel: non-finite output");
  return f;
}

Vector EnergyModel::energy(const Matrix& x, const Matrix& cond) const {
  check_inputs(x, cond);
  return forward(x, cond, nullptr);
}

Vector EnergyModel::energy_backward(const Matrix& x, const Matrix& cond, const Vector& weights,
                                    GradVector* grad, Matrix* grad_x) const {
  check_inputs(x, cond);
  if (weights.size() != x.rows()) throw Error("EnergyModel::energy_backward: one weight per point required");
  GradVector scratch;
  if (grad == nullptr) {
    scratch = GradVector::Zero(params_.size());
    grad = &scratch;
  } else if (grad->size() != params_.size()) {
    throw Error("EnergyModel::energy_backward: gradient length mismatch");
  }
  Cache cache;
  const Vector f = forward(x, cond, &cache);
  backward_cached(x, cache, weights, grad, grad_x);
  return f;
}

Vector EnergyModel::energy(const Matrix& x, const Matrix& cond, Tape& tape) const {
  check_inputs(x, cond);
  tape.x = x;
  return forward(x, cond, &tape.cache);
}

void EnergyModel::backward(const Tape& tape, const Vector& weights, GradVector* grad, Matrix* grad_x) const {
  if (weights.size() != tape.x.rows()) throw Error("EnergyModel::backward: one weight per point required");
  if (tape.cache.blocks.size() != blocks_.size()) throw Error("EnergyModel::backward: tape from another model");
  GradVector scratch;
  if (grad == nullptr) {
    scratch = GradVector::Zero(params_.size());
    grad = &scratch;
  } else if (grad->size() != params_.size()) {
    throw Error("EnergyModel::backward: gradient length mismatch");
  }
  backward_cached(tape.x, tape.cache, weights, grad, grad_x);
}

void EnergyModel::backward_cached(const Matrix& x, const Cache& cache, const Vector& weights, GradVector* grad,
                                  Matrix* grad_x) const {
  const double* p = params_.data();
  double* g = grad->data();

  Matrix gh;
  head_.backward(p, cache.last, weights, g, &gh);
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    const Block& blk = blocks_[b];
    const BlockCache& bc = cache.blocks[b];
    const double alpha = p[blk.alpha_offset];
    const Matrix g_pre = nn::silu_backward(bc.pre, gh);
    g[blk.alpha_offset] += (g_pre.array() * bc.input.array()).sum();
    Matrix g_in = alpha * g_pre;
    Matrix g_l2;
    if (blk.film_scale) {
      g_l2 = g_pre.cwiseProduct(bc.gamma);
      blk.film_scale->backward(p, bc.scale_cache, g_pre.cwiseProduct(bc.l2), g, nullptr);
      blk.film_shift->backward(p, bc.shift_cache, g_pre, g, nullptr);
    } else {
      g_l2 = g_pre;
    }
    Matrix g_s2;
    blk.lin2.backward(p, bc.s2, g_l2, g, &g_s2);
    Matrix g_l1;
    blk.ln2.backward(p, bc.ln2, nn::silu_backward(bc.n2, g_s2), g, g_l1);
    Matrix g_s1;
    blk.lin1.backward(p, bc.s1, g_l1, g, &g_s1);
    Matrix g_x;
    blk.ln1.backward(p, bc.ln1, nn::silu_backward(bc.n1, g_s1), g, g_x);
    gh = g_in + g_x;
  }
  const Matrix g_h0 = nn::silu_backward(cache.h0, gh);
  input_.backward(p, x, g_h0, g, grad_x);
}

Vector EnergyModel::log_density(const Matrix& x, const Matrix& cond) const {
  return energy(x, cond) / config_.temperature;
}

Matrix EnergyModel::grad_log_density(const Matrix& x, const Matrix& cond) const {
  Matrix gx;
  energy_backward(x, cond, Vector::Constant(x.rows(), 1.0 / config_.temperature), nullptr, &gx);
  return gx;
}

WarmStartReport warm_start_fit(EnergyModel& ebm, const FlowModel& flow, const WarmStartConfig& config,
                               Rng& rng, const Matrix& conditions) {
  if (config.iterations < 0 || config.batch < 1 || !(config.lr > 0.0) || config.check_every < 1) {
    throw Error("warm_start_fit: invalid configuration");
  }
  if (flow.dim() != ebm.dim() || flow.cond_dim() != ebm.cond_dim()) {
    throw Error("warm_start_fit: flow and energy model disagree on dimensions");
  }
  if (ebm.cond_dim() > 0 && conditions.rows() == 0) {
    throw Error("warm_start_fit: conditional models need a pool of conditions");
  }
  const double t = ebm.temperature();
  auto draw_conditions = [&](Index n) -> Matrix {
    if (ebm.cond_dim() == 0) return {};
    std::uniform_int_distribution<Index> pick(0, conditions.rows() - 1);
    Matrix c(n, conditions.cols());
    for (Index i = 0; i < n; ++i) c.row(i) = conditions.row(pick(rng));
    return c;
  };
  const Matrix held_cond = draw_conditions(config.heldout);
  const auto held = flow.sample_with_log_prob(config.heldout, held_cond, rng);
  auto heldout_mse = [&]() {
    const Vector r = ebm.log_density(held.points, held_cond) - held.log_probs;
    return r.squaredNorm() / static_cast<double>(r.size());
  };

  WarmStartReport report;
  report.initial_mse = heldout_mse();
  report.heldout_mse.push_back(report.initial_mse);
  AdamConfig ac;
  ac.lr = config.lr;
  Adam adam(ebm.params().size(), ac);
  int rising = 0;
  for (int it = 1; it <= config.iterations; ++it) {
    ebm.power_iteration(1);
    const Matrix cond = draw_conditions(config.batch);
    const auto s = flow.sample_with_log_prob(config.batch, cond, rng);
    // d/dpsi mean (f/T - lp)^2 = mean 2 (f/T - lp) / T * df/dpsi
    const Vector f = ebm.energy(s.points, cond);
    const Vector w = (2.0 / (t * static_cast<double>(config.batch))) * (f / t - s.log_probs);
    GradVector grad = GradVector::Zero(ebm.params().size());
    ebm.energy_backward(s.points, cond, w, &grad, nullptr);
    adam.step(ebm.params().values(), grad, Direction::kDescent);
    if (it % config.check_every == 0 || it == config.iterations) {
      const double mse = heldout_mse();
      rising = mse > report.heldout_mse.back() ? rising + 1 : 0;
      report.heldout_mse.push_back(mse);
      if (!std::isfinite(mse) || rising >= config.divergence_patience) {
        throw Error("warm_start_fit: diverged at iteration " + std::to_string(it) + " (held-out MSE " +
                    std::to_string(mse) + ", initial " + std::to_string(report.initial_mse) + ")");
      }
    }
  }
  report.final_mse = report.heldout_mse.back();
  return report;
}

}  // namespace pdflow
