#include "pdflow/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "pdflow/checkpoint.hpp"
#include "pdflow/datasets.hpp"
#include "pdflow/eval.hpp"
#include "pdflow/partition.hpp"
#include "pdflow/sampling.hpp"

namespace pdflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Substreams of the master seed.
enum Stream : std::uint64_t {
  kFlowInit = 1,
  kEbmInit = 2,
  kTrainer = 3,
  kWarmStart = 4,
  kBatches = 5,
  kPosterior = 6,
  kModelSamples = 7,
  kC2st = 8,
  kEvalBase = 1000,
};

struct Data {
  Matrix train, test, train_cond, test_cond;
  std::optional<SyntheticSpec> spec;  // set for synthetic datasets
  bool analytic = false;
  std::optional<SbiTask> task;
  json metadata;

  bool conditional() const { return train_cond.cols() > 0; }
};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return json::parse(in);
}

Data load_data(const ExperimentConfig& e) {
  Data d;
  if (e.experiment == "sbi") {
    SbiTask task = make_sbi_task(e.sbi_task);
    if (e.u0) task.u0 = *e.u0;
    if (e.prior_lo) task.prior_lo = *e.prior_lo;
    if (e.prior_hi) task.prior_hi = *e.prior_hi;
    const Dataset ds = simulate_dataset(task, e.simulations + e.test_simulations, e.data_seed);
    const Split s = train_test_split(ds.points, e.simulations, e.test_simulations, e.data_seed, ds.conditions);
    d.train = s.train;
    d.test = s.test;
    d.train_cond = s.train_cond;
    d.test_cond = s.test_cond;
    d.metadata = ds.metadata;
    d.task = task;
  } else {
    SyntheticSpec spec{e.dataset, e.n_train + e.n_test, e.data_seed, e.moons_noise};
    const Dataset ds = make_dataset(spec);
    const Split s = train_test_split(ds.points, e.n_train, e.n_test, e.data_seed);
    d.train = s.train;
    d.test = s.test;
    d.metadata = ds.metadata;
    d.analytic = ds.mixture.has_value();
    d.spec = spec;
  }
  d.metadata["n_train"] = d.train.rows();
  d.metadata["n_test"] = d.test.rows();
  d.metadata["split_seed"] = e.data_seed;
  return d;
}

void write_data(const Data& d, const fs::path& dir) {
  fs::create_directories(dir);
  write_points_csv((dir / "train.csv").string(), d.train, d.train_cond);
  write_points_csv((dir / "test.csv").string(), d.test, d.test_cond);
  json meta = d.metadata;
  meta["schema_version"] = kOutputSchemaVersion;
  meta["dim"] = d.train.cols();
  meta["cond_dim"] = d.train_cond.cols();
  write_json(dir / "dataset.json", meta);
}

struct EvalPoint {
  double flow_nll = kNaN;
  double ebm_nll = kNaN;
  double log_zeta = kNaN;
};

EvalPoint evaluate(const FlowModel& flow, const EnergyModel& ebm, bool with_ebm, const Data& d, Index zeta_M,
                   std::uint64_t seed) {
  EvalPoint p;
  p.flow_nll = test_nll(flow_log_density(flow, d.test_cond), d.test);
  // Conditional runs would need one partition estimate per test condition; only the flow is scored there.
  if (!with_ebm || d.conditional()) return p;
  try {
    Rng rng(seed);
    p.log_zeta = estimate_log_zeta(ebm, flow, zeta_M, {}, rng).value;
    p.ebm_nll = test_nll(ebm_log_density(ebm, p.log_zeta), d.test);
  } catch (const Error& err) {
    warn(std::string("EBM evaluation failed: ") + err.what());
    p.ebm_nll = kNaN;
  }
  return p;
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& path) : out_(path) {
    if (!out_) throw Error("cannot write " + path.string());
    out_ << "step,nll_flow,reverse_kl,nll_ebm,zeta,log_zeta,ess,lambda_fw,lambda_rv,lambda_prx,lambda_u,lambda_l,"
            "eps_fw,eps_rv,eps_ebm,delta_fw,delta_ebm,lagrangian,test_nll_flow,test_nll_ebm,test_log_zeta,wall_time\n";
  }

  void row(const StepMetrics& m, const std::optional<EvalPoint>& ev, double wall) {
    const auto& c = m.constraints;
    const auto& d = m.dual;
    out_ << m.step;
    for (double v : {c.nll_flow, c.reverse_kl, c.nll_ebm, c.zeta, c.log_zeta, c.ess, d.lambda_fw, d.lambda_rv,
                     d.lambda_prx, d.lambda_u, d.lambda_l, d.eps_fw, d.eps_rv, d.eps_ebm, d.delta_fw, d.delta_ebm,
                     m.lagrangian}) {
      out_ << ',' << fmt(v);
    }
    if (ev) {
      out_ << ',' << fmt(ev->flow_nll) << ',' << fmt(ev->ebm_nll) << ',' << fmt(ev->log_zeta);
    } else {
      out_ << ",,,";
    }
    out_ << ',' << fmt(wall) << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

struct RunningStat {
  double sum = 0, min = INFINITY, max = -INFINITY, last = kNaN;
  std::int64_t n = 0;
  void add(double v) {
    if (!std::isfinite(v)) return;
    sum += v;
    min = std::min(min, v);
    max = std::max(max, v);
    last = v;
    ++n;
  }
  json to_json() const {
    if (n == 0) return nullptr;
    return {{"mean", sum / static_cast<double>(n)}, {"min", min}, {"max", max}, {"last", last}, {"count", n}};
  }
};

void write_marker(const fs::path& dir, const std::string& text) {
  std::ofstream out(dir / kPartialMarker);
  out << text << '\n';
}

struct Trained {
  json report;
  FlowModel flow;
  EnergyModel ebm;
  double log_zeta = kNaN;  // from the final evaluation
};

// One training run with its metrics, checkpoints and grids under `dir`.
Trained train_run(const ExperimentConfig& e, const TrainConfig& tc, const Data& d, const fs::path& dir,
                  const std::string& name) {
  fs::create_directories(dir / "checkpoints");
  write_marker(dir, "running");

  FlowConfig fc = e.flow;
  fc.dim = d.train.cols();
  fc.cond_dim = d.train_cond.cols();
  EnergyConfig ec = e.ebm;
  ec.dim = fc.dim;
  ec.cond_dim = fc.cond_dim;
  FlowModel flow(fc, derive_seed(e.seed, kFlowInit));
  EnergyModel ebm(ec, derive_seed(e.seed, kEbmInit));
  const bool with_ebm = tc.mode != TrainMode::kFlowOnly;

  json warm = nullptr;
  if (with_ebm && e.warm_start.iterations > 0) {
    Rng rng(derive_seed(e.seed, kWarmStart));
    const WarmStartReport w = warm_start_fit(ebm, flow, e.warm_start, rng, d.train_cond);
    warm = {{"initial_mse", w.initial_mse}, {"final_mse", w.final_mse}};
  }

  TrainerState st = make_trainer(tc, std::move(flow), std::move(ebm), derive_seed(e.seed, kTrainer));
  const auto lambda0 = st.dual.lambdas();
  auto lambda_min = lambda0, lambda_max = lambda0;
  bool lambda_constant = true;

  const Index n = d.train.rows();
  const bool full_batch = e.batch_size == 0 || e.batch_size >= n;
  Rng batch_rng(derive_seed(e.seed, kBatches));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Index cursor = n;
  Matrix xb, cb;

  MetricsWriter metrics(dir / "metrics.csv");
  RunningStat batch_zeta, eval_zeta;
  double best_flow = INFINITY, best_ebm = INFINITY;
  std::int64_t best_flow_step = -1, best_ebm_step = -1;
  EvalPoint last_eval;
  double train_seconds = 0.0;
  const auto start = std::chrono::steady_clock::now();

  int step = 0;
  try {
    for (step = 1; step <= e.steps; ++step) {
      const Matrix* x = &d.train;
      const Matrix* c = &d.train_cond;
      if (!full_batch) {
        if (cursor + e.batch_size > n) {
          std::shuffle(order.begin(), order.end(), batch_rng);
          cursor = 0;
        }
        xb.resize(e.batch_size, d.train.cols());
        cb.resize(d.conditional() ? e.batch_size : 0, d.train_cond.cols());
        for (Index i = 0; i < e.batch_size; ++i) {
          const Index r = order[static_cast<std::size_t>(cursor + i)];
          xb.row(i) = d.train.row(r);
          if (d.conditional()) cb.row(i) = d.train_cond.row(r);
        }
        cursor += e.batch_size;
        x = &xb;
        c = &cb;
      }
      const auto t0 = std::chrono::steady_clock::now();
      const StepMetrics m = train_step(st, *x, *c, d.train_cond);
      train_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      const auto l = m.dual.lambdas();
      for (std::size_t k = 0; k < 5; ++k) {
        if (l[k] != lambda0[k]) lambda_constant = false;
        lambda_min[k] = std::min(lambda_min[k], l[k]);
        lambda_max[k] = std::max(lambda_max[k], l[k]);
      }
      if (with_ebm) batch_zeta.add(m.constraints.zeta);

      std::optional<EvalPoint> ev;
      if (step % e.eval_every == 0 || step == e.steps) {
        ev = evaluate(st.flow, st.ebm, with_ebm, d, e.eval_zeta_M, derive_seed(e.seed, kEvalBase + static_cast<std::uint64_t>(step)));
        last_eval = *ev;
        if (ev->flow_nll < best_flow) {
          best_flow = ev->flow_nll;
          best_flow_step = step;
        }
        if (ev->ebm_nll < best_ebm) {
          best_ebm = ev->ebm_nll;
          best_ebm_step = step;
        }
        eval_zeta.add(std::exp(ev->log_zeta));
      }
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      metrics.row(m, ev, wall);
      if (e.checkpoint_every > 0 && step % e.checkpoint_every == 0) {
        const std::string tag = "step" + std::to_string(step);
        save_checkpoint((dir / "checkpoints" / ("flow_" + tag + ".json")).string(), checkpoint_json(st.flow));
        if (with_ebm) save_checkpoint((dir / "checkpoints" / ("ebm_" + tag + ".json")).string(), checkpoint_json(st.ebm));
      }
    }
  } catch (const std::exception& err) {
    metrics.flush();
    write_marker(dir, "failed at step " + std::to_string(step) + ": " + err.what());
    throw;
  }
  metrics.flush();

  save_checkpoint((dir / "checkpoints" / "flow_final.json").string(), checkpoint_json(st.flow));
  save_checkpoint((dir / "checkpoints" / "ebm_final.json").string(), checkpoint_json(st.ebm));
  const DualState& dual = st.dual;
  write_json(dir / "checkpoints" / "dual_final.json",
             {{"schema_version", kOutputSchemaVersion},
              {"step", st.step},
              {"lambdas", dual.lambdas()},
              {"eps", {dual.eps_fw, dual.eps_rv, dual.eps_ebm}},
              {"delta", {dual.delta_fw, dual.delta_ebm}}});

  json report = {{"schema_version", kOutputSchemaVersion},
                 {"name", name},
                 {"status", "complete"},
                 {"mode", to_string(tc.mode)},
                 {"variant", tc.variant == Variant::kNegativeNll ? "negative_nll" : "standard"},
                 {"steps", e.steps},
                 {"batch_size", full_batch ? n : e.batch_size},
                 {"lowest_test_nll_flow", num_or_null(best_flow)},
                 {"lowest_test_nll_flow_step", best_flow_step},
                 {"final_test_nll_flow", num_or_null(last_eval.flow_nll)},
                 {"lowest_test_nll_ebm", num_or_null(best_ebm)},
                 {"lowest_test_nll_ebm_step", best_ebm_step},
                 {"final_test_nll_ebm", num_or_null(last_eval.ebm_nll)},
                 {"final_log_zeta", num_or_null(last_eval.log_zeta)},
                 {"final_zeta", num_or_null(std::exp(last_eval.log_zeta))},
                 {"zeta_trace", {{"batch", batch_zeta.to_json()}, {"eval", eval_zeta.to_json()}}},
                 {"lambda",
                  {{"initial", lambda0},
                   {"final", dual.lambdas()},
                   {"min", lambda_min},
                   {"max", lambda_max},
                   {"constant", lambda_constant}}},
                 {"mean_step_seconds", train_seconds / std::max(1, e.steps)},
                 {"warm_start", warm}};
  if (d.analytic) {
    report["analytic_test_nll"] =
        test_nll([&](const Matrix& x) { return analytic_log_density(*d.spec, x); }, d.test);
  }

  if (e.write_grids && !d.conditional() && d.train.cols() == 2) {
    fs::create_directories(dir / "grids");
    const Box region = padded_bounding_box(d.test, e.grid_padding);
    auto emit = [&](const std::string& tag, const LogDensityFn& fn, json extra) {
      const DensityGrid g = density_grid(fn, region, e.grid_resolution);
      extra["model"] = tag;
      write_grid(g, (dir / "grids" / (tag + ".csv")).string(), (dir / "grids" / (tag + ".json")).string(), extra);
      return g.mass();
    };
    json masses;
    masses["flow"] = emit("flow", flow_log_density(st.flow), {});
    if (with_ebm && std::isfinite(last_eval.log_zeta)) {
      masses["ebm"] = emit("ebm", ebm_log_density(st.ebm, last_eval.log_zeta), {{"log_zeta", last_eval.log_zeta}});
    }
    if (d.analytic) {
      masses["truth"] = emit("truth", [&](const Matrix& x) { return analytic_log_density(*d.spec, x); }, {});
    }
    report["grid_mass"] = masses;
  }

  Trained t{report, std::move(st.flow), std::move(st.ebm), last_eval.log_zeta};
  write_json(dir / "report.json", t.report);
  fs::remove(dir / kPartialMarker);
  return t;
}

TrainConfig base_train_config(const ExperimentConfig& e) { return e.train; }

json sbi_posterior_check(const ExperimentConfig& e, const Data& d, Trained& t, const fs::path& dir) {
  const SbiTask& task = *d.task;
  const RowVector u0 = task.u0;
  const double radius = e.radius > 0 ? e.radius : default_acceptance_radius(task.name);
  const Index n = e.posterior_samples;

  Rng prng(derive_seed(e.data_seed, kPosterior));
  const RejectionResult truth = rejection_sample_posterior(
      [&](Rng& r) { return task.sample_prior(r); }, [&](const RowVector& b, Rng& r) { return task.simulate(b, r); },
      u0, radius, n, prng);

  Rng mrng(derive_seed(e.seed, kModelSamples));
  const Matrix cond = u0;
  const Matrix flow_samples = t.flow.sample_with_log_prob(n, cond, mrng).points;
  Matrix prior(n, u0.cols());
  for (Index i = 0; i < n; ++i) prior.row(i) = task.sample_prior(mrng);

  fs::create_directories(dir / "samples");
  write_points_csv((dir / "samples" / "posterior_reference.csv").string(), truth.params);
  write_points_csv((dir / "samples" / "flow.csv").string(), flow_samples);

  C2stOptions opt;
  opt.test_fraction = e.c2st_test_fraction;
  auto score = [&](const Matrix& model, std::uint64_t stream) {
    const C2stReport r = c2st(truth.params, model, derive_seed(e.seed, kC2st + stream), opt);
    return json{{"accuracy", r.accuracy}, {"n_truth", r.n_truth}, {"n_model", r.n_model},
                {"test_fraction", r.test_fraction}, {"epochs", r.epochs}, {"classifier", r.classifier}};
  };
  json out = {{"u0", std::vector<double>(u0.data(), u0.data() + u0.size())},
              {"radius", radius},
              {"rejection_attempts", truth.attempts},
              {"acceptance_rate", truth.acceptance_rate},
              {"c2st_flow", score(flow_samples, 0)},
              {"c2st_prior", score(prior, 1)}};

  if (e.sbi_langevin && t.report["mode"] != "flow_only") {
    LangevinConfig lc = e.langevin;
    lc.seed = derive_seed(e.seed, kModelSamples + 100);
    Matrix init = lc.init == LangevinInit::kFlow ? t.flow.sample_with_log_prob(n, cond, mrng).points
                                                   : standard_normal(n, u0.cols(), mrng);
    const LangevinResult lr = langevin_sample(t.ebm, init, lc, cond);
    write_points_csv((dir / "samples" / "ebm_langevin.csv").string(), lr.points);
    out["c2st_ebm"] = score(lr.points, 2);
    out["langevin_aborted_chains"] = lr.aborted.size();
  }
  return out;
}

fs::path prepare_out(const json& config, const std::string& out_dir) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  json resolved = config;
  write_json(dir / "resolved_config.json", resolved);
  return dir;
}

}  // namespace

double default_acceptance_radius(const std::string& task) {
  // 1e-3 quantiles of |u - u0| under prior predictive draws at the default u0.
  if (task == "two_moons") return 0.025;
  if (task == "gaussian_mixture") return 0.0125;
  throw Error("no default acceptance radius for task '" + task + "'");
}

json run_experiment(const json& config, const std::string& out_dir) {
  const ExperimentConfig e = experiment_config_from_json(config);
  const fs::path dir = prepare_out(config, out_dir);
  write_marker(dir, "running");
  try {
    const Data d = load_data(e);
    write_data(d, dir / "data");
    json report = {{"schema_version", kOutputSchemaVersion}, {"experiment", e.experiment}, {"seed", e.seed}};

    if (e.experiment == "density2d") {
      Trained t = train_run(e, base_train_config(e), d, dir, "main");
      report["run"] = t.report;
    } else if (e.experiment == "sbi") {
      Trained t = train_run(e, base_train_config(e), d, dir, "main");
      report["run"] = t.report;
      report["posterior"] = sbi_posterior_check(e, d, t, dir);
    } else if (e.experiment == "gmm40_compare") {
      json arms;
      for (const auto& arm : e.compare_arms) {
        TrainConfig tc = base_train_config(e);
        tc.mode = parse_train_mode(arm);
        arms[arm] = train_run(e, tc, d, dir / "runs" / arm, arm).report;
      }
      report["arms"] = arms;
      if (arms.contains("dual") && arms.contains("flow_only")) {
        const json& a = arms["dual"]["lowest_test_nll_flow"];
        const json& b = arms["flow_only"]["lowest_test_nll_flow"];
        if (a.is_number() && b.is_number()) report["dual_minus_flow_only_lowest_nll"] = a.get<double>() - b.get<double>();
      }
    } else if (e.experiment == "weighted_sum_grid") {
      std::ofstream table(dir / "grid_table.csv");
      table << "w_for,w_back,lowest_test_nll_flow,lowest_test_nll_ebm,final_zeta\n";
      json runs = json::array();
      for (double wf : e.grid_w_for) {
        for (double wb : e.grid_w_back) {
          TrainConfig tc = base_train_config(e);
          tc.mode = TrainMode::kWeightedSum;
          tc.w_for = wf;
          tc.w_back = wb;
          const std::string name = "wfor_" + fmt(wf) + "_wback_" + fmt(wb);
          const json r = train_run(e, tc, d, dir / "runs" / name, name).report;
          auto cell = [](const json& v) { return v.is_number() ? fmt(v.get<double>()) : std::string("nan"); };
          table << fmt(wf) << ',' << fmt(wb) << ',' << cell(r["lowest_test_nll_flow"]) << ','
                << cell(r["lowest_test_nll_ebm"]) << ',' << cell(r["final_zeta"]) << '\n';
          runs.push_back({{"w_for", wf}, {"w_back", wb}, {"report", r}});
        }
      }
      report["runs"] = runs;
    }
    write_json(dir / "report.json", report);
    fs::remove(dir / kPartialMarker);
    return report;
  } catch (const std::exception& err) {
    write_marker(dir, std::string("failed: ") + err.what());
    throw;
  }
}

json msamples_study(const json& config, const std::vector<Index>& M_values, const std::string& out_dir) {
  if (M_values.empty()) throw Error("msamples_study: no M values");
  for (Index m : M_values) {
    if (m < 1) throw Error("msamples_study: M values must be >= 1");
  }
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", config);
  std::ofstream table(dir / "msamples.csv");
  table << "M,lowest_test_nll_flow,lowest_test_nll_ebm,mean_step_seconds\n";
  json rows = json::array();
  for (Index m : M_values) {
    json c = config;
    c["train"]["M"] = m;
    const json r = run_experiment(c, (dir / ("M_" + std::to_string(m))).string());
    const json& run = r.contains("run") ? r["run"] : r;
    auto cell = [](const json& v) { return v.is_number() ? fmt(v.get<double>()) : std::string("nan"); };
    table << m << ',' << cell(run.value("lowest_test_nll_flow", json())) << ','
          << cell(run.value("lowest_test_nll_ebm", json())) << ',' << cell(run.value("mean_step_seconds", json()))
          << '\n';
    table.flush();
    rows.push_back({{"M", m},
                    {"lowest_test_nll_flow", run.value("lowest_test_nll_flow", json())},
                    {"lowest_test_nll_ebm", run.value("lowest_test_nll_ebm", json())},
                    {"mean_step_seconds", run.value("mean_step_seconds", json())}});
  }
  json out = {{"schema_version", kOutputSchemaVersion}, {"rows", rows}};
  write_json(dir / "msamples.json", out);
  return out;
}

namespace {

struct LoadedRun {
  ExperimentConfig e;
  FlowModel flow;
  EnergyModel ebm;
  fs::path dir;
};

fs::path find_config_dir(fs::path dir) {
  // Runs under runs/<name>/ share the experiment's configuration two levels up.
  for (int up = 0; up < 3; ++up) {
    if (fs::exists(dir / "resolved_config.json")) return dir;
    dir = dir.parent_path();
  }
  throw Error("no resolved_config.json found above the run directory");
}

LoadedRun load_any_run(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const fs::path cfg_dir = find_config_dir(dir);
  if (fs::exists(dir / kPartialMarker)) throw Error(run_dir + ": run is incomplete");
  LoadedRun r{experiment_config_from_json(read_json(cfg_dir / "resolved_config.json")), {}, {}, dir};
  const fs::path ck = dir / "checkpoints";
  if (!fs::exists(ck / "flow_final.json")) throw Error(run_dir + ": no final checkpoint");
  r.flow = flow_from_checkpoint(load_checkpoint((ck / "flow_final.json").string()));
  r.ebm = energy_from_checkpoint(load_checkpoint((ck / "ebm_final.json").string()));
  return r;
}

}  // namespace

json evaluate_run(const std::string& run_dir, std::uint64_t seed) {
  LoadedRun r = load_any_run(run_dir);
  const fs::path cfg_dir = find_config_dir(r.dir);
  Data d;
  read_points_csv((cfg_dir / "data" / "test.csv").string(), r.flow.dim(), d.test, d.test_cond);
  const EvalPoint p = evaluate(r.flow, r.ebm, true, d, r.e.eval_zeta_M, seed);
  json out = {{"schema_version", kOutputSchemaVersion},
              {"run_dir", run_dir},
              {"seed", seed},
              {"test_nll_flow", num_or_null(p.flow_nll)},
              {"test_nll_ebm", num_or_null(p.ebm_nll)},
              {"log_zeta", num_or_null(p.log_zeta)},
              {"n_test", d.test.rows()}};
  write_json(r.dir / "eval.json", out);
  return out;
}

Matrix sample_run(const std::string& run_dir, SampleSource source, Index n, const Matrix& cond, std::uint64_t seed) {
  if (n < 1) throw Error("sample_run: n must be positive");
  LoadedRun r = load_any_run(run_dir);
  if (r.flow.cond_dim() > 0 && cond.rows() != 1) throw Error("sample_run: conditional run needs one condition row");
  if (r.flow.cond_dim() == 0 && cond.size() != 0) throw Error("sample_run: unconditional run takes no condition");
  Rng rng(seed);
  if (source == SampleSource::kFlow) return r.flow.sample_with_log_prob(n, cond, rng).points;
  LangevinConfig lc = r.e.langevin;
  lc.seed = derive_seed(seed, 1);
  const Matrix init = lc.init == LangevinInit::kFlow ? r.flow.sample_with_log_prob(n, cond, rng).points
                                                     : standard_normal(n, r.flow.dim(), rng);
  return langevin_sample(r.ebm, init, lc, cond).points;
}

std::string metrics_without_wall_time(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::string line, out;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    out += line.substr(0, comma) + '\n';
  }
  return out;
}

}  // namespace pdflow
