#include "pdflow/eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "pdflow/nn.hpp"
#include "pdflow/optim.hpp"

namespace pdflow {

LogDensityFn flow_log_density(const FlowModel& flow, const Matrix& cond) {
  return [&flow, cond](const Matrix& x) { return flow.log_prob(x, cond); };
}

LogDensityFn ebm_log_density(const EnergyModel& ebm, double log_zeta, const Matrix& cond) {
  return [&ebm, log_zeta, cond](const Matrix& x) {
    return Vector(ebm.log_density(x, cond).array() - log_zeta);
  };
}

double test_nll(const LogDensityFn& log_density, const Matrix& points) {
  if (points.rows() == 0) throw Error("test_nll: no points");
  const Index chunk = 4096;
  double sum = 0.0;
  for (Index start = 0; start < points.rows(); start += chunk) {
    const Index n = std::min(chunk, points.rows() - start);
    const Vector lp = log_density(points.middleRows(start, n));
    for (Index i = 0; i < n; ++i) {
      if (!std::isfinite(lp[i])) throw NonFiniteError("test_nll: non-finite log-density", start + i);
    }
    sum += lp.sum();
  }
  return -sum / static_cast<double>(points.rows());
}

DensityGrid density_grid(const LogDensityFn& log_density, const Box& region, Index resolution) {
  if (region.dim() != 2) throw Error("density_grid: region must be 2D");
  if (resolution < 1) throw Error("density_grid: resolution must be >= 1");
  DensityGrid g;
  g.region = region;
  g.resolution = resolution;
  const RowVector px = (region.hi - region.lo) / static_cast<double>(resolution);
  const double area = px.prod();
  Matrix centers(resolution * resolution, 2);
  for (Index r = 0; r < resolution; ++r) {
    for (Index c = 0; c < resolution; ++c) {
      centers.row(r * resolution + c) << region.lo[0] + (static_cast<double>(c) + 0.5) * px[0],
          region.lo[1] + (static_cast<double>(r) + 0.5) * px[1];
    }
  }
  const Vector lp = log_density(centers);
  g.values.resize(resolution, resolution);
  for (Index r = 0; r < resolution; ++r) {
    for (Index c = 0; c < resolution; ++c) g.values(r, c) = std::exp(lp[r * resolution + c]) * area;
  }
  return g;
}

Box padded_bounding_box(const Matrix& points, double padding) {
  const RowVector lo = points.colwise().minCoeff();
  const RowVector hi = points.colwise().maxCoeff();
  const RowVector pad = padding * (hi - lo);
  return Box{lo - pad, hi + pad};
}

void write_grid(const DensityGrid& grid, const std::string& csv_path, const std::string& json_path,
                const nlohmann::json& extra) {
  std::ofstream csv(csv_path);
  if (!csv) throw Error("write_grid: cannot open " + csv_path);
  csv.precision(17);
  for (Index r = 0; r < grid.values.rows(); ++r) {
    for (Index c = 0; c < grid.values.cols(); ++c) csv << (c > 0 ? "," : "") << grid.values(r, c);
    csv << '\n';
  }
  nlohmann::json meta = extra;
  meta["schema_version"] = 1;
  meta["resolution"] = grid.resolution;
  meta["lo"] = {grid.region.lo[0], grid.region.lo[1]};
  meta["hi"] = {grid.region.hi[0], grid.region.hi[1]};
  meta["layout"] = "row-major; row index runs along x1, column index along x0; value = density(center) * pixel area";
  meta["mass"] = grid.mass();
  std::ofstream js(json_path);
  if (!js) throw Error("write_grid: cannot open " + json_path);
  js << meta.dump(2) << '\n';
}

namespace {

double bce_backward(const Vector& logits, const Vector& labels, Vector& d_logits) {
  const auto n = static_cast<double>(logits.size());
  double loss = 0.0;
  d_logits.resize(logits.size());
  for (Index i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    loss += softplus(z) - labels[i] * z;
    d_logits[i] = (sigmoid(z) - labels[i]) / n;
  }
  return loss / n;
}

double bce(const Vector& logits, const Vector& labels) {
  Vector d;
  return bce_backward(logits, labels, d);
}

}  // namespace

C2stReport c2st(const Matrix& truth, const Matrix& model, std::uint64_t seed, const C2stOptions& options) {
  if (truth.rows() == 0 || model.rows() == 0) throw Error("c2st: both sample sets must be non-empty");
  if (truth.cols() != model.cols()) throw Error("c2st: dimension mismatch");
  if (!(options.test_fraction > 0.0 && options.test_fraction < 1.0)) throw Error("c2st: invalid split fraction");
  const Index d = truth.cols();
  const Index n = truth.rows() + model.rows();
  Matrix all(n, d);
  all << truth, model;
  Vector labels(n);
  labels.head(truth.rows()).setOnes();
  labels.tail(model.rows()).setZero();

  Rng rng(derive_seed(seed, 0xC25));
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_test = static_cast<Index>(std::llround(options.test_fraction * static_cast<double>(n)));
  const Index n_trainval = n - n_test;
  const auto n_val = static_cast<Index>(std::llround(options.validation_fraction * static_cast<double>(n_trainval)));
  const Index n_train = n_trainval - n_val;
  auto gather = [&](Index start, Index count, Matrix& x, Vector& y) {
    x.resize(count, d);
    y.resize(count);
    for (Index i = 0; i < count; ++i) {
      x.row(i) = all.row(perm[static_cast<std::size_t>(start + i)]);
      y[i] = labels[perm[static_cast<std::size_t>(start + i)]];
    }
  };
  Matrix x_train, x_val, x_test;
  Vector y_train, y_val, y_test;
  gather(0, n_train, x_train, y_train);
  gather(n_train, n_val, x_val, y_val);
  gather(n_trainval, n_test, x_test, y_test);
  auto single_class = [](const Vector& y) { return y.size() == 0 || y.minCoeff() == y.maxCoeff(); };
  if (single_class(y_train) || single_class(y_test)) throw Error("c2st: degenerate single-class split");

  // Standardize with training statistics.
  const RowVector mean = x_train.colwise().mean();
  RowVector sd = ((x_train.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  sd = sd.cwiseMax(1e-12);
  auto standardize = [&](Matrix& x) { x = ((x.rowwise() - mean).array().rowwise() / sd.array()).matrix(); };
  standardize(x_train);
  standardize(x_val);
  standardize(x_test);

  ParamVector params;
  nn::Mlp net(params, "c2st", {d, options.hidden, options.hidden, 1}, rng);
  params.seal();
  AdamConfig ac;
  ac.lr = options.lr;
  ac.beta1 = 0.9;
  ac.beta2 = 0.999;
  Adam adam(params.size(), ac);

  Vector best = params.values();
  double best_val = INFINITY;
  int since_best = 0;
  C2stReport report;
  std::vector<Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n_train; start += options.batch_size) {
      const Index b = std::min(options.batch_size, n_train - start);
      Matrix xb(b, d);
      Vector yb(b);
      for (Index i = 0; i < b; ++i) {
        xb.row(i) = x_train.row(order[static_cast<std::size_t>(start + i)]);
        yb[i] = y_train[order[static_cast<std::size_t>(start + i)]];
      }
      nn::Mlp::Cache cache;
      const Vector logits = net.forward(params.data(), xb, cache).col(0);
      Vector dl;
      bce_backward(logits, yb, dl);
      GradVector g = GradVector::Zero(params.size());
      net.backward(params.data(), cache, dl, g.data(), nullptr);
      adam.step(params.values(), g, Direction::kDescent);
    }
    report.epochs = epoch;
    const double val = n_val > 0 ? bce(net.forward(params.data(), x_val).col(0), y_val) : 0.0;
    if (val < best_val - 1e-6) {
      best_val = val;
      best = params.values();
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  params.assign(best);
  const Vector logits = net.forward(params.data(), x_test).col(0);
  Index correct = 0;
  for (Index i = 0; i < n_test; ++i) correct += ((logits[i] > 0.0) == (y_test[i] > 0.5)) ? 1 : 0;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(n_test);
  report.n_truth = truth.rows();
  report.n_model = model.rows();
  report.test_fraction = options.test_fraction;
  report.classifier = "MLP " + std::to_string(d) + "-" + std::to_string(options.hidden) + "-" +
                      std::to_string(options.hidden) + "-1, SiLU, Adam, early stopping on a " +
                      std::to_string(options.validation_fraction) + " validation share";
  return report;
}

}  // namespace pdflow
