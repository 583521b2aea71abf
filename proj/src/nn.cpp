#include "pdflow/nn.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace pdflow::nn {

namespace {

#ifdef __GLIBC__
// Activations are a few hundred KB each. Above glibc's mmap threshold every temporary is a fresh
// mapping that page-faults on first touch, which doubled the cost of a backward pass.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

void normalize_or_keep(Vector& x) {
  const double n = x.norm();
  if (n > 0.0) x /= n;
}

}  // namespace

PowerState make_power_state(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PowerState s{Vector(rows), Vector(cols)};
  for (Index i = 0; i < rows; ++i) s.u[i] = normal(rng);
  for (Index i = 0; i < cols; ++i) s.v[i] = normal(rng);
  normalize_or_keep(s.u);
  normalize_or_keep(s.v);
  return s;
}

double power_iterate(const Eigen::Ref<const Matrix>& w, PowerState& state, int iterations) {
  for (int k = 0; k < iterations; ++k) {
    Vector v = w.transpose() * state.u;
    if (v.norm() == 0.0) break;
    state.v = v.normalized();
    Vector u = w * state.v;
    if (u.norm() == 0.0) break;
    state.u = u.normalized();
  }
  return state.u.dot(w * state.v);
}

Matrix spectral_normalize(const Eigen::Ref<const Matrix>& w, PowerState& state, int iterations) {
  if (w.squaredNorm() == 0.0) {
    warn("spectral_normalize: zero matrix returned unchanged");
    return w;
  }
  const double sigma = power_iterate(w, state, iterations);
  if (!(sigma > 0.0)) {
    warn("spectral_normalize: non-positive singular value estimate; matrix returned unchanged");
    return w;
  }
  return w / sigma;
}

Linear Linear::create(ParamVector& params, const std::string& name, Index in, Index out,
                      bool spectral, Rng& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  l.spectral = spectral;
  l.w_offset = params.add(name + ".weight", in * out);
  l.b_offset = params.add(name + ".bias", out);
  l.init_uniform(params, rng);
  if (spectral) l.power = make_power_state(out, in, rng);
  return l;
}

void Linear::init_uniform(ParamVector& params, Rng& rng) const {
  const double bound = in > 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : 1.0;
  std::uniform_real_distribution<double> uni(-bound, bound);
  double* p = params.data();
  for (Index i = 0; i < in * out; ++i) p[w_offset + i] = uni(rng);
  for (Index i = 0; i < out; ++i) p[b_offset + i] = uni(rng);
}

double Linear::sigma(const double* p) const {
  return power.u.dot(weight(p) * power.v);
}

Matrix Linear::applied_weight(const double* p) const {
  Matrix w = weight(p);
  if (!spectral) return w;
  const double s = power.u.dot(w * power.v);
  if (w.squaredNorm() == 0.0 || !(s > 0.0)) return w;
  return w / s;
}

Matrix Linear::forward(const double* p, const Matrix& x) const {
  Matrix y = x * applied_weight(p).transpose();
  y.rowwise() += bias(p).transpose();
  return y;
}

void Linear::backward(const double* p, const Matrix& x, const Matrix& dy, double* grad,
                      Matrix* dx) const {
  const Matrix w_applied = applied_weight(p);
  const Matrix g_applied = dy.transpose() * x;  // out x in
  Eigen::Map<Matrix> gw(grad + w_offset, out, in);
  Eigen::Map<Vector> gb(grad + b_offset, out);
  const double s = spectral ? power.u.dot(weight(p) * power.v) : 1.0;
  if (spectral && s > 0.0 && weight(p).squaredNorm() > 0.0) {
    // W_applied = W / s with s = u^T W v and u, v held fixed.
    const double inner = (g_applied.array() * w_applied.array()).sum();
    gw += (g_applied - inner * power.u * power.v.transpose()) / s;
  } else {
    gw += g_applied;
  }
  gb += dy.colwise().sum().transpose();
  if (dx != nullptr) *dx = dy * w_applied;
}

void Linear::power_iteration(const double* p, int iterations) {
  if (!spectral) return;
  power_iterate(weight(p), power, iterations);
}

LayerNorm LayerNorm::create(ParamVector& params, const std::string& name, Index dim) {
  LayerNorm ln;
  ln.dim = dim;
  ln.gain_offset = params.add(name + ".gain", dim);
  ln.bias_offset = params.add(name + ".bias", dim);
  ln.init(params);
  return ln;
}

void LayerNorm::init(ParamVector& params) const {
  params.values().segment(gain_offset, dim).setOnes();
  params.values().segment(bias_offset, dim).setZero();
}

Matrix LayerNorm::forward(const double* p, const Matrix& x, Cache& cache) const {
  const Eigen::Map<const RowVector> gain(p + gain_offset, dim);
  const Eigen::Map<const RowVector> beta(p + bias_offset, dim);
  const Vector mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Vector var = centered.array().square().rowwise().mean();
  cache.rstd = (var.array() + kEps).rsqrt();
  cache.xhat = (centered.array().colwise() * cache.rstd.array()).matrix();
  return ((cache.xhat.array().rowwise() * gain.array()).rowwise() + beta.array()).matrix();
}

void LayerNorm::backward(const double* p, const Cache& cache, const Matrix& dy, double* grad,
                         Matrix& dx) const {
  const double h = static_cast<double>(dim);
  const Eigen::Map<const RowVector> gain(p + gain_offset, dim);
  Eigen::Map<RowVector> g_gain(grad + gain_offset, dim);
  Eigen::Map<RowVector> g_beta(grad + bias_offset, dim);
  g_gain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  g_beta += dy.colwise().sum();
  const Eigen::ArrayXXd dxhat = dy.array().rowwise() * gain.array();
  const Eigen::ArrayXd s1 = dxhat.rowwise().sum();
  const Eigen::ArrayXd s2 = (dxhat * cache.xhat.array()).rowwise().sum();
  const Eigen::ArrayXXd inner = (h * dxhat).colwise() - s1 - cache.xhat.array().colwise() * s2;
  dx = (inner.colwise() * (cache.rstd.array() / h)).matrix();
}

Matrix silu(const Matrix& x) {
  return (x.array() / (1.0 + (-x.array()).exp())).matrix();
}

Matrix silu_backward(const Matrix& x, const Matrix& dy) {
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
  return (dy.array() * s * (1.0 + x.array() * (1.0 - s))).matrix();
}

Mlp::Mlp(ParamVector& params, const std::string& name, const std::vector<Index>& dims, Rng& rng)
    : dims_(dims) {
  if (dims.size() < 2) throw Error("Mlp: need at least input and output dimension");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers_.push_back(Linear::create(params, name + "." + std::to_string(i), dims[i], dims[i + 1],
                                     false, rng));
  }
}

void Mlp::init_uniform(ParamVector& params, Rng& rng) const {
  for (const auto& l : layers_) l.init_uniform(params, rng);
}

Matrix Mlp::forward(const double* p, const Matrix& x) const {
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(p, h);
    if (i + 1 < layers_.size()) h = silu(h);
  }
  return h;
}

Matrix Mlp::forward(const double* p, const Matrix& x, Cache& cache) const {
  cache.inputs.clear();
  cache.pre.clear();
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cache.inputs.push_back(h);
    h = layers_[i].forward(p, h);
    if (i + 1 < layers_.size()) {
      cache.pre.push_back(h);
      h = silu(h);
    }
  }
  return h;
}

void Mlp::backward(const double* p, const Cache& cache, const Matrix& dy, double* grad,
                   Matrix* dx) const {
  Matrix g = dy;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    Matrix gin;
    const bool need_input_grad = k > 0 || dx != nullptr;
    layers_[k].backward(p, cache.inputs[k], g, grad, need_input_grad ? &gin : nullptr);
    if (k > 0) {
      g = silu_backward(cache.pre[k - 1], gin);
    } else if (dx != nullptr) {
      *dx = std::move(gin);
    }
  }
}

}  // namespace pdflow::nn
