#include "pdflow/spline.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace pdflow {

namespace {

// Forward-mode dual number with a fixed number of tangent directions; only used
// for the seven scalars that enter a single spline bin.
template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  static Dual variable(double value, int slot) {
    Dual r(value);
    r.d[static_cast<std::size_t>(slot)] = 1.0;
    return r;
  }
};

template <int N>
Dual<N> operator+(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v + b.v);
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
template <int N>
Dual<N> operator-(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v - b.v);
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
template <int N>
Dual<N> operator-(const Dual<N>& a) {
  Dual<N> r(-a.v);
  for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
  return r;
}
template <int N>
Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v * b.v);
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
template <int N>
Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v / b.v);
  const double inv = 1.0 / b.v;
  for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
  return r;
}
template <int N>
Dual<N> sqrt(const Dual<N>& a) {
  Dual<N> r(std::sqrt(a.v));
  const double k = r.v > 0.0 ? 0.5 / r.v : 0.0;
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * k;
  return r;
}
template <int N>
Dual<N> log(const Dual<N>& a) {
  Dual<N> r(std::log(a.v));
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] / a.v;
  return r;
}

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Dual<N>& x) {
  return x.v;
}

using std::log;
using std::sqrt;

// One bin, inverse direction: knots (xk, yk)-(xk1, yk1) with end slopes d0, d1.
template <typename S>
void rq_inverse(const S& y, const S& xk, const S& xk1, const S& yk, const S& yk1, const S& d0,
                const S& d1, S& x, S& log_det) {
  const S w = xk1 - xk;
  const S h = yk1 - yk;
  const S s = h / w;
  const S dy = y - yk;
  const S curv = d1 + d0 - S(2.0) * s;
  const S a = h * (s - d0) + dy * curv;
  const S b = h * d0 - dy * curv;
  const S c = -s * dy;
  S disc = b * b - S(4.0) * a * c;
  if (value_of(disc) < 0.0) disc = S(0.0);
  const S xi = S(2.0) * c / (-b - sqrt(disc));
  x = xi * w + xk;
  const S omx = S(1.0) - xi;
  const S xi_omx = xi * omx;
  const S denom = s + curv * xi_omx;
  const S num = s * s * (d1 * xi * xi + S(2.0) * s * xi_omx + d0 * omx * omx);
  // log |dx/dy| of the inverse.
  log_det = -(log(num) - S(2.0) * log(denom));
}

template <typename S>
void rq_forward(const S& x, const S& xk, const S& xk1, const S& yk, const S& yk1, const S& d0,
                const S& d1, S& y, S& log_det) {
  const S w = xk1 - xk;
  const S h = yk1 - yk;
  const S s = h / w;
  const S xi = (x - xk) / w;
  const S omx = S(1.0) - xi;
  const S xi_omx = xi * omx;
  const S curv = d1 + d0 - S(2.0) * s;
  const S denom = s + curv * xi_omx;
  y = yk + h * (s * xi * xi + d0 * xi_omx) / denom;
  const S num = s * s * (d1 * xi * xi + S(2.0) * s * xi_omx + d0 * omx * omx);
  log_det = log(num) - S(2.0) * log(denom);
}

std::vector<double> knots_from_sizes(const std::vector<double>& sizes, double bound) {
  std::vector<double> k(sizes.size() + 1);
  k[0] = -bound;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) k[i + 1] = k[i] + sizes[i];
  k.back() = bound;
  return k;
}

// Bin index for `v` in sorted knots of length K+1; clamps to [0, K-1].
int find_bin(const std::vector<double>& knots, double v) {
  const auto it = std::upper_bound(knots.begin() + 1, knots.end() - 1, v);
  return static_cast<int>(it - knots.begin()) - 1;
}

void softmax(std::span<const double> raw, std::vector<double>& out) {
  out.resize(raw.size());
  const double m = *std::max_element(raw.begin(), raw.end());
  double z = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = std::exp(raw[i] - m);
    z += out[i];
  }
  for (auto& v : out) v /= z;
}

double derivative_offset(double min_derivative) {
  // softplus(offset) + min_derivative == 1, so zero raw values give the identity.
  return std::log(std::expm1(1.0 - min_derivative));
}

void check_options(const SplineOptions& o) {
  if (o.bins < 1) throw Error("spline: bins must be >= 1");
  if (!(o.tail_bound > 0.0)) throw Error("spline: tail bound must be positive");
  if (o.min_width * o.bins >= 1.0 || o.min_height * o.bins >= 1.0) {
    throw Error("spline: minimum bin size too large for the bin count");
  }
}

}  // namespace

SplineTransformParams SplineTransformParams::identity(int bins, double tail_bound) {
  SplineTransformParams p;
  p.tail_bound = tail_bound;
  p.widths.assign(static_cast<std::size_t>(bins), 2.0 * tail_bound / bins);
  p.heights = p.widths;
  p.derivatives.assign(static_cast<std::size_t>(bins) + 1, 1.0);
  return p;
}

SplineTransformParams SplineTransformParams::from_unconstrained(std::span<const double> raw,
                                                                const SplineOptions& options) {
  check_options(options);
  const auto k = static_cast<std::size_t>(options.bins);
  if (raw.size() != static_cast<std::size_t>(options.raw_size())) {
    throw Error("spline: expected " + std::to_string(options.raw_size()) + " raw values, got " +
                std::to_string(raw.size()));
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) throw NonFiniteError("spline: non-finite raw parameter", static_cast<Index>(i));
  }
  SplineTransformParams p;
  p.tail_bound = options.tail_bound;
  const double span2 = 2.0 * options.tail_bound;
  std::vector<double> s;
  softmax(raw.subspan(0, k), s);
  p.widths.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    p.widths[i] = span2 * (options.min_width + (1.0 - options.min_width * options.bins) * s[i]);
  }
  softmax(raw.subspan(k, k), s);
  p.heights.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    p.heights[i] = span2 * (options.min_height + (1.0 - options.min_height * options.bins) * s[i]);
  }
  const double off = derivative_offset(options.min_derivative);
  p.derivatives.assign(k + 1, 1.0);
  for (std::size_t i = 1; i < k; ++i) {
    p.derivatives[i] = options.min_derivative + softplus(raw[2 * k + i - 1] + off);
  }
  return p;
}

void SplineTransformParams::validate() const {
  if (!std::isfinite(tail_bound) || !(tail_bound > 0.0)) throw Error("spline: invalid tail bound");
  if (widths.empty() || heights.size() != widths.size() || derivatives.size() != widths.size() + 1) {
    throw Error("spline: inconsistent parameter sizes");
  }
  auto check = [](const std::vector<double>& v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) throw NonFiniteError(std::string("spline: non-finite ") + what, static_cast<Index>(i));
      if (!(v[i] > 0.0)) throw Error(std::string("spline: non-positive ") + what);
    }
  };
  check(widths, "width");
  check(heights, "height");
  check(derivatives, "derivative");
  const double target = 2.0 * tail_bound;
  const double tol = 1e-9 * target;
  if (std::abs(std::accumulate(widths.begin(), widths.end(), 0.0) - target) > tol ||
      std::abs(std::accumulate(heights.begin(), heights.end(), 0.0) - target) > tol) {
    throw Error("spline: widths and heights must each sum to 2B");
  }
}

SplineResult spline_forward(double x, const SplineTransformParams& params) {
  params.validate();
  const double b = params.tail_bound;
  if (x < -b || x > b) return {x, 0.0};
  const auto xs = knots_from_sizes(params.widths, b);
  const auto ys = knots_from_sizes(params.heights, b);
  const int k = find_bin(xs, x);
  const auto ku = static_cast<std::size_t>(k);
  double y = 0.0;
  double ld = 0.0;
  rq_forward(x, xs[ku], xs[ku + 1], ys[ku], ys[ku + 1], params.derivatives[ku],
             params.derivatives[ku + 1], y, ld);
  return {y, ld};
}

SplineResult spline_inverse(double y, const SplineTransformParams& params) {
  params.validate();
  const double b = params.tail_bound;
  if (y < -b || y > b) return {y, 0.0};
  const auto xs = knots_from_sizes(params.widths, b);
  const auto ys = knots_from_sizes(params.heights, b);
  const int k = find_bin(ys, y);
  const auto ku = static_cast<std::size_t>(k);
  double x = 0.0;
  double ld = 0.0;
  rq_inverse(y, xs[ku], xs[ku + 1], ys[ku], ys[ku + 1], params.derivatives[ku],
             params.derivatives[ku + 1], x, ld);
  return {x, ld};
}

double spline_inverse_backward(double y, std::span<const double> raw, const SplineOptions& options,
                               double g_out, double g_log_det, std::span<double> d_raw) {
  const double bound = options.tail_bound;
  if (y < -bound || y > bound) return g_out;
  const auto params = SplineTransformParams::from_unconstrained(raw, options);
  const auto xs = knots_from_sizes(params.widths, bound);
  const auto ys = knots_from_sizes(params.heights, bound);
  const int k = find_bin(ys, y);
  const auto ku = static_cast<std::size_t>(k);
  const auto nb = static_cast<std::size_t>(options.bins);

  using D = Dual<7>;
  D x;
  D ld;
  rq_inverse(D::variable(y, 0), D::variable(xs[ku], 1), D::variable(xs[ku + 1], 2),
             D::variable(ys[ku], 3), D::variable(ys[ku + 1], 4),
             D::variable(params.derivatives[ku], 5), D::variable(params.derivatives[ku + 1], 6), x, ld);
  std::array<double, 7> g{};
  for (int i = 0; i < 7; ++i) g[i] = g_out * x.d[i] + g_log_det * ld.d[i];

  // Interior knot j (1..K-1) sits at -B + 2B * cumsum(normalized sizes)[j-1].
  auto knots_backward = [&](std::size_t raw_offset, double min_size, double g_lo, double g_hi) {
    std::vector<double> g_knot(nb + 1, 0.0);
    g_knot[ku] += g_lo;
    g_knot[ku + 1] += g_hi;
    std::vector<double> g_norm(nb, 0.0);
    double acc = 0.0;
    for (std::size_t j = nb - 1; j >= 1; --j) {
      acc += g_knot[j];
      g_norm[j - 1] = 2.0 * bound * acc;
    }
    std::vector<double> s;
    softmax(raw.subspan(raw_offset, nb), s);
    const double scale = 1.0 - min_size * options.bins;
    double dot = 0.0;
    for (std::size_t i = 0; i < nb; ++i) dot += s[i] * g_norm[i] * scale;
    for (std::size_t i = 0; i < nb; ++i) d_raw[raw_offset + i] += s[i] * (g_norm[i] * scale - dot);
  };
  knots_backward(0, options.min_width, g[1], g[2]);
  knots_backward(nb, options.min_height, g[3], g[4]);

  const double off = derivative_offset(options.min_derivative);
  auto deriv_backward = [&](std::size_t knot, double gd) {
    if (knot == 0 || knot == nb) return;
    const std::size_t r = 2 * nb + knot - 1;
    d_raw[r] += gd * sigmoid(raw[r] + off);
  };
  deriv_backward(ku, g[5]);
  deriv_backward(ku + 1, g[6]);
  return g[0];
}

}  // namespace pdflow
