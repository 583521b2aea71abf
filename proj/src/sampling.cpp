#include "pdflow/sampling.hpp"

namespace pdflow {

LangevinResult langevin_sample(const UnnormalizedDensity& density, const Matrix& init, const LangevinConfig& config,
                               const Matrix& cond) {
  if (!(config.step_size >= 0.0) || config.steps < 0 || config.record_every < 0) {
    throw Error("langevin_sample: invalid configuration");
  }
  if (init.cols() != density.dim()) throw Error("langevin_sample: initial points have the wrong dimension");
  if (!condition_matches(cond, init.rows(), density.cond_dim())) {
    throw Error("langevin_sample: condition missing or of the wrong shape");
  }
  require_finite(init, "langevin_sample: non-finite initial point");
  const Index n = init.rows();
  const Index d = init.cols();
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) rngs.emplace_back(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_scale = std::sqrt(2.0 * config.step_size);
  const Matrix full_cond = cond.rows() == 1 && n > 1 ? broadcast_rows(cond, n) : cond;

  LangevinResult r;
  r.points = init;
  std::vector<Index> active(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) active[static_cast<std::size_t>(i)] = i;
  Matrix x_active = init;
  Matrix c_active = full_cond;
  for (int k = 1; k <= config.steps && !active.empty(); ++k) {
    const Matrix grad = density.grad_log_density(x_active, c_active);
    Matrix next = x_active + config.step_size * grad;
    for (Index a = 0; a < next.rows(); ++a) {
      Rng& rng = rngs[static_cast<std::size_t>(active[static_cast<std::size_t>(a)])];
      for (Index j = 0; j < d; ++j) {
        const double z = normal(rng);
        if (config.add_noise) next(a, j) += noise_scale * z;
      }
    }
    std::vector<Index> keep;
    for (Index a = 0; a < next.rows(); ++a) {
      const Index chain = active[static_cast<std::size_t>(a)];
      if (next.row(a).allFinite()) {
        r.points.row(chain) = next.row(a);
        keep.push_back(a);
      } else {
        r.aborted.push_back(chain);
        warn("langevin_sample: chain " + std::to_string(chain) + " aborted at step " + std::to_string(k) +
             " (non-finite position)");
      }
    }
    if (static_cast<Index>(keep.size()) != next.rows()) {
      std::vector<Index> still;
      Matrix xa(static_cast<Index>(keep.size()), d);
      Matrix ca(full_cond.size() > 0 ? static_cast<Index>(keep.size()) : 0, full_cond.cols());
      for (std::size_t q = 0; q < keep.size(); ++q) {
        const Index chain = active[static_cast<std::size_t>(keep[q])];
        still.push_back(chain);
        xa.row(static_cast<Index>(q)) = next.row(keep[q]);
        if (ca.rows() > 0) ca.row(static_cast<Index>(q)) = full_cond.row(chain);
      }
      active = std::move(still);
      x_active = std::move(xa);
      c_active = std::move(ca);
    } else {
      x_active = std::move(next);
    }
    if (config.record_every > 0 && k % config.record_every == 0) r.snapshots.push_back(r.points);
  }
  return r;
}

RejectionResult rejection_sample_posterior(const PriorSampler& prior, const Simulator& simulator, const RowVector& u0,
                                           double radius, Index n, Rng& rng, std::uint64_t max_attempts) {
  if (!(radius > 0.0)) throw Error("rejection_sample_posterior: radius must be positive");
  if (n < 1) throw Error("rejection_sample_posterior: n must be >= 1");
  RejectionResult r;
  std::vector<RowVector> accepted;
  accepted.reserve(static_cast<std::size_t>(n));
  const double r2 = radius * radius;
  while (static_cast<Index>(accepted.size()) < n) {
    // Past the budget, keep going only while the acceptance rate stays at or above 1e-6.
    if (r.attempts >= max_attempts &&
        static_cast<double>(accepted.size()) < 1e-6 * static_cast<double>(r.attempts)) {
      throw Error("rejection_sample_posterior: accepted " + std::to_string(accepted.size()) + " of " +
                  std::to_string(n) + " after " + std::to_string(r.attempts) + " attempts (rate " +
                  std::to_string(static_cast<double>(accepted.size()) / static_cast<double>(r.attempts)) +
                  "); increase the radius");
    }
    ++r.attempts;
    RowVector beta = prior(rng);
    const RowVector u = simulator(beta, rng);
    if (u.size() != u0.size()) throw Error("rejection_sample_posterior: outcome dimension mismatch");
    if ((u - u0).squaredNorm() <= r2) accepted.push_back(std::move(beta));
  }
  r.params.resize(n, accepted.front().size());
  for (Index i = 0; i < n; ++i) r.params.row(i) = accepted[static_cast<std::size_t>(i)];
  r.acceptance_rate = static_cast<double>(n) / static_cast<double>(r.attempts);
  return r;
}

}  // namespace pdflow
