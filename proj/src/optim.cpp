#include "pdflow/optim.hpp"

#include <algorithm>

namespace pdflow {

Adam::Adam(Index n, AdamConfig config)
    : config_(config), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {
  if (!(config_.lr > 0.0)) throw Error("Adam: learning rate must be positive");
  if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
    throw Error("Adam: betas must lie in [0, 1)");
  }
}

void Adam::set_lr(double lr) {
  if (!(lr > 0.0)) throw Error("Adam: learning rate must be positive");
  config_.lr = lr;
}

void Adam::step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grad,
                Direction direction) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error("Adam::step: length mismatch (state " + std::to_string(m_.size()) + ", params " +
                std::to_string(params.size()) + ", grad " + std::to_string(grad.size()) + ")");
  }
  require_finite(grad, "Adam::step: non-finite gradient");

  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double sign = direction == Direction::kAscent ? 1.0 : -1.0;
  for (Index i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] += sign * config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
}

FiniteDiffReport finite_diff_check(const std::function<double(const Vector&)>& loss,
                                   const Vector& params_in, const Vector& analytic,
                                   const FiniteDiffOptions& options) {
  // Copy first: the loss commonly writes its argument into the very storage `params_in` refers to.
  const Vector params = params_in;
  if (analytic.size() != params.size()) throw Error("finite_diff_check: length mismatch");
  FiniteDiffReport report;
  report.entries.resize(static_cast<std::size_t>(params.size()));
  Vector probe = params;
  Vector numeric(params.size());
  std::vector<bool> finite(static_cast<std::size_t>(params.size()), true);
  for (Index i = 0; i < params.size(); ++i) {
    const double h = options.h * std::max(1.0, std::abs(params[i]));
    probe[i] = params[i] + h;
    const double up = loss(probe);
    probe[i] = params[i] - h;
    const double down = loss(probe);
    probe[i] = params[i];
    finite[static_cast<std::size_t>(i)] = std::isfinite(up) && std::isfinite(down);
    numeric[i] = (up - down) / (2.0 * h);
  }
  double scale = 1.0;
  for (Index i = 0; i < params.size(); ++i) {
    if (finite[static_cast<std::size_t>(i)]) scale = std::max(scale, std::abs(numeric[i]));
  }
  const double floor = options.floor * scale;
  for (Index i = 0; i < params.size(); ++i) {
    auto& e = report.entries[static_cast<std::size_t>(i)];
    e.index = i;
    e.analytic = analytic[i];
    e.numeric = numeric[i];
    if (!finite[static_cast<std::size_t>(i)] || !std::isfinite(analytic[i])) {
      e.rel_error = INFINITY;
    } else {
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
      e.rel_error = std::abs(analytic[i] - numeric[i]) / denom;
    }
    e.ok = e.rel_error <= options.tol;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    if (!e.ok) report.failures.push_back(i);
  }
  return report;
}

}  // namespace pdflow
