#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pdflow/core.hpp"
#include "pdflow/energy.hpp"

namespace pdflow {

enum class LangevinInit { kFlow, kStandardNormal };

struct LangevinConfig {
  double step_size = 1e-4;
  int steps = 2000;
  LangevinInit init = LangevinInit::kFlow;
  std::uint64_t seed = 0;
  /// Setting this to false drops the diffusion term (pure gradient ascent on log q).
  bool add_noise = true;
  /// Keep a copy of all chains every this many steps (0 keeps none).
  int record_every = 0;
};

struct LangevinResult {
  Matrix points;
  std::vector<Matrix> snapshots;
  /// Chains stopped because their position became non-finite; they keep their last finite position.
  std::vector<Index> aborted;
};

/// Unadjusted Langevin: x <- x + s grad log q(x) + sqrt(2 s) z, one chain per row of `init`.
/// Chain i draws its noise from substream i of `config.seed`.
LangevinResult langevin_sample(const UnnormalizedDensity& density, const Matrix& init, const LangevinConfig& config,
                               const Matrix& cond = {});

struct RejectionResult {
  Matrix params;
  std::uint64_t attempts = 0;
  double acceptance_rate = 0.0;
};

using PriorSampler = std::function<RowVector(Rng&)>;
using Simulator = std::function<RowVector(const RowVector&, Rng&)>;

/// The first `n` prior draws whose simulated outcome lies within distance `radius` of `u0`.
/// Aborts once `max_attempts` draws have been made with an acceptance rate below 1e-6.
RejectionResult rejection_sample_posterior(const PriorSampler& prior, const Simulator& simulator, const RowVector& u0,
                                           double radius, Index n, Rng& rng,
                                           std::uint64_t max_attempts = 100'000'000);

}  // namespace pdflow
