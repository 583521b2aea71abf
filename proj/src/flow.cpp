#include "pdflow/flow.hpp"

#include <span>

namespace pdflow {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Vector standard_normal_log_density(const Matrix& z) {
  const double c = -0.5 * static_cast<double>(z.cols()) * kLog2Pi;
  return (-0.5 * z.rowwise().squaredNorm()).array() + c;
}

// Column i holds the conditioner output of point i, so each per-coordinate
// block of raw spline parameters is contiguous.
std::span<const double> raw_block(const Matrix& raw_t, Index point, std::size_t coord, Index raw_size) {
  return {raw_t.col(point).data() + static_cast<Index>(coord) * raw_size, static_cast<std::size_t>(raw_size)};
}

}  // namespace

FlowModel::FlowModel(const FlowConfig& config, std::uint64_t seed) : config_(config) {
  if (config_.dim < 1) throw Error("FlowModel: dimension must be >= 1");
  if (config_.cond_dim < 0 || config_.transforms < 0 || config_.bins < 1 || config_.hidden < 1 ||
      config_.hidden_layers < 0 || !(config_.tail_bound > 0.0)) {
    throw Error("FlowModel: invalid configuration");
  }
  Rng rng(derive_seed(seed, 0xF10));
  if (config_.leading_affine) {
    AffineLayer a;
    a.shift_offset = params_.add("affine.shift", config_.dim);
    a.log_scale_offset = params_.add("affine.log_scale", config_.dim);
    layers_.emplace_back(a);
  }
  const Index m = config_.dim;
  const Index first = (m + 1) / 2;
  const SplineOptions opts = spline_options();
  for (int t = 0; t < config_.transforms; ++t) {
    CouplingLayer c;
    std::vector<Index> lo;
    std::vector<Index> hi;
    for (Index i = 0; i < m; ++i) (i < first ? lo : hi).push_back(i);
    if (m == 1) {
      c.transform_dims = lo;
    } else if (t % 2 == 0) {
      c.identity_dims = lo;
      c.transform_dims = hi;
    } else {
      c.identity_dims = hi;
      c.transform_dims = lo;
    }
    std::vector<Index> dims{static_cast<Index>(c.identity_dims.size()) + config_.cond_dim};
    for (int h = 0; h < config_.hidden_layers; ++h) dims.push_back(config_.hidden);
    dims.push_back(static_cast<Index>(c.transform_dims.size()) * opts.raw_size());
    c.conditioner = nn::Mlp(params_, "coupling" + std::to_string(t), dims, rng);
    auto& last = c.conditioner.layers().back();
    last.weight(params_.data()) *= config_.output_init_scale;
    last.bias(params_.data()).setZero();
    layers_.emplace_back(std::move(c));
  }
  params_.seal();
}

SplineOptions FlowModel::spline_options() const {
  SplineOptions o;
  o.bins = config_.bins;
  o.tail_bound = config_.tail_bound;
  return o;
}

void FlowModel::check_inputs(const Matrix& x, const Matrix& cond) const {
  if (x.cols() != config_.dim) {
    throw Error("FlowModel: expected points of dimension " + std::to_string(config_.dim) +
                ", got " + std::to_string(x.cols()));
  }
  if (!condition_matches(cond, x.rows(), config_.cond_dim)) {
    throw Error(config_.cond_dim == 0 ? "FlowModel: unconditional model given a condition"
                                      : "FlowModel: condition missing or of the wrong shape");
  }
}

Matrix FlowModel::conditioner_input(const CouplingLayer& layer, const Matrix& x,
                                    const Matrix& cond) const {
  const Index n = x.rows();
  const auto nid = static_cast<Index>(layer.identity_dims.size());
  Matrix in(n, nid + config_.cond_dim);
  for (Index j = 0; j < nid; ++j) in.col(j) = x.col(layer.identity_dims[static_cast<std::size_t>(j)]);
  if (config_.cond_dim > 0) in.rightCols(config_.cond_dim) = broadcast_rows(cond, n);
  return in;
}

Matrix FlowModel::inverse_impl(const Matrix& x, const Matrix& cond, Vector& log_det,
                               std::vector<LayerCache>* caches) const {
  const double* p = params_.data();
  const Index n = x.rows();
  const SplineOptions opts = spline_options();
  const Index rs = opts.raw_size();
  log_det = Vector::Zero(n);
  if (caches != nullptr) caches->assign(layers_.size(), LayerCache{});
  Matrix u = x;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    LayerCache* cache = caches != nullptr ? &(*caches)[l] : nullptr;
    if (cache != nullptr) cache->input = u;
    std::visit(
        Overloaded{
            [&](const AffineLayer& a) {
              const Eigen::Map<const RowVector> shift(p + a.shift_offset, config_.dim);
              const Eigen::Map<const RowVector> log_scale(p + a.log_scale_offset, config_.dim);
              u = ((u.rowwise() - shift).array().rowwise() * (-log_scale.array()).exp()).matrix();
              log_det.array() -= log_scale.sum();
            },
            [&](const CouplingLayer& c) {
              const Matrix in = conditioner_input(c, u, cond);
              Matrix raw = cache != nullptr ? c.conditioner.forward(p, in, cache->mlp)
                                            : c.conditioner.forward(p, in);
              require_finite(raw, "FlowModel: non-finite conditioner output in layer " + std::to_string(l));
              Matrix raw_t = raw.transpose();
              for (Index i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c.transform_dims.size(); ++j) {
                  const Index d = c.transform_dims[j];
                  const auto sp = SplineTransformParams::from_unconstrained(raw_block(raw_t, i, j, rs), opts);
                  const SplineResult r = spline_inverse(u(i, d), sp);
                  u(i, d) = r.value;
                  log_det[i] += r.log_det;
                }
              }
              if (cache != nullptr) cache->raw = std::move(raw_t);
            },
        },
        layers_[l]);
    for (Index i = 0; i < u.size(); ++i) {
      if (!std::isfinite(u.data()[i])) {
        throw NonFiniteError("FlowModel: non-finite value after inverse of layer " + std::to_string(l), i);
      }
    }
  }
  return u;
}

Matrix FlowModel::inverse(const Matrix& x, const Matrix& cond, Vector* log_det) const {
  check_inputs(x, cond);
  Vector ld;
  Matrix z = inverse_impl(x, cond, ld, nullptr);
  if (log_det != nullptr) *log_det = std::move(ld);
  return z;
}

Matrix FlowModel::forward(const Matrix& z, const Matrix& cond, Vector* log_det) const {
  check_inputs(z, cond);
  const double* p = params_.data();
  const Index n = z.rows();
  const SplineOptions opts = spline_options();
  const Index rs = opts.raw_size();
  Vector ld = Vector::Zero(n);
  Matrix u = z;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    std::visit(
        Overloaded{
            [&](const AffineLayer& a) {
              const Eigen::Map<const RowVector> shift(p + a.shift_offset, config_.dim);
              const Eigen::Map<const RowVector> log_scale(p + a.log_scale_offset, config_.dim);
              u = (u.array().rowwise() * log_scale.array().exp()).matrix().rowwise() + shift;
              ld.array() += log_scale.sum();
            },
            [&](const CouplingLayer& c) {
              const Matrix raw_t = c.conditioner.forward(p, conditioner_input(c, u, cond)).transpose();
              require_finite(raw_t, "FlowModel: non-finite conditioner output in layer " + std::to_string(l));
              for (Index i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c.transform_dims.size(); ++j) {
                  const Index d = c.transform_dims[j];
                  const auto sp = SplineTransformParams::from_unconstrained(raw_block(raw_t, i, j, rs), opts);
                  const SplineResult r = spline_forward(u(i, d), sp);
                  u(i, d) = r.value;
                  ld[i] += r.log_det;
                }
              }
            },
        },
        layers_[l]);
  }
  if (log_det != nullptr) *log_det = std::move(ld);
  return u;
}

Vector FlowModel::log_prob(const Matrix& x, const Matrix& cond) const {
  check_inputs(x, cond);
  Vector ld;
  const Matrix z = inverse_impl(x, cond, ld, nullptr);
  return standard_normal_log_density(z) + ld;
}

Vector FlowModel::log_prob_backward(const Matrix& x, const Matrix& cond, const Vector& weights,
                                    GradVector& grad) const {
  check_inputs(x, cond);
  if (weights.size() != x.rows()) throw Error("FlowModel::log_prob_backward: one weight per point required");
  if (grad.size() != params_.size()) throw Error("FlowModel::log_prob_backward: gradient length mismatch");
  std::vector<LayerCache> caches;
  Vector ld;
  const Matrix z = inverse_impl(x, cond, ld, &caches);
  const Vector lp = standard_normal_log_density(z) + ld;

  const double* p = params_.data();
  double* g = grad.data();
  const SplineOptions opts = spline_options();
  const Index rs = opts.raw_size();
  const Index n = x.rows();
  // d(weighted sum)/dz for the base density; every layer's log-det enters with weight w_i.
  Matrix gu = -(z.array().colwise() * weights.array()).matrix();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerCache& cache = caches[l];
    std::visit(
        Overloaded{
            [&](const AffineLayer& a) {
              const Eigen::Map<const RowVector> shift(p + a.shift_offset, config_.dim);
              const Eigen::Map<const RowVector> log_scale(p + a.log_scale_offset, config_.dim);
              const RowVector inv_scale = (-log_scale.array()).exp();
              const Matrix centered = cache.input.rowwise() - shift;
              Eigen::Map<RowVector> g_shift(g + a.shift_offset, config_.dim);
              Eigen::Map<RowVector> g_log_scale(g + a.log_scale_offset, config_.dim);
              const Matrix gx = (gu.array().rowwise() * inv_scale.array()).matrix();
              g_shift -= gx.colwise().sum();
              g_log_scale -= (gx.array() * centered.array()).colwise().sum().matrix();
              g_log_scale.array() -= weights.sum();
              gu = gx;
            },
            [&](const CouplingLayer& c) {
              Matrix g_raw_t = Matrix::Zero(cache.raw.rows(), cache.raw.cols());
              Matrix gin = gu;
              for (Index i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c.transform_dims.size(); ++j) {
                  const Index d = c.transform_dims[j];
                  std::span<double> d_raw(g_raw_t.col(i).data() + static_cast<Index>(j) * rs,
                                          static_cast<std::size_t>(rs));
                  gin(i, d) = spline_inverse_backward(cache.input(i, d), raw_block(cache.raw, i, j, rs), opts,
                                                      gu(i, d), weights[i], d_raw);
                }
              }
              Matrix d_cond_in;
              c.conditioner.backward(p, cache.mlp, g_raw_t.transpose(), g, &d_cond_in);
              for (std::size_t j = 0; j < c.identity_dims.size(); ++j) {
                gin.col(c.identity_dims[j]) += d_cond_in.col(static_cast<Index>(j));
              }
              gu = std::move(gin);
            },
        },
        layers_[l]);
  }
  return lp;
}

FlowModel::Sample FlowModel::sample_with_log_prob(Index n, const Matrix& cond, Rng& rng) const {
  if (n < 1) throw Error("FlowModel::sample_with_log_prob: n must be >= 1");
  const Matrix z = standard_normal(n, config_.dim, rng);
  Vector ld;
  Sample s;
  s.points = forward(z, cond, &ld);
  s.log_probs = standard_normal_log_density(z) - ld;
  return s;
}

}  // namespace pdflow
