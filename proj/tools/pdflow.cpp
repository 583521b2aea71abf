// Command-line front end: run, eval, sample, msamples.
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "pdflow/config.hpp"
#include "pdflow/datasets.hpp"
#include "pdflow/experiment.hpp"

using namespace pdflow;

namespace {

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint normalizing-flow / energy-model training by primal-dual optimization"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  auto add_config_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration (comments allowed)");
    sub->add_option("--set", overrides, "Override, e.g. --set train.lr_flow=1e-4 (repeatable)");
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--out", out_dir, "Output directory");
  };

  CLI::App* run = app.add_subcommand("run", "Run an experiment");
  add_config_flags(run);
  bool check_only = false;
  run->add_flag("--check", check_only, "Validate and print the resolved configuration, then exit");

  CLI::App* msamples = app.add_subcommand("msamples", "Repeat a run for several partition sample counts");
  add_config_flags(msamples);
  std::string m_list;
  msamples->add_option("--M", m_list, "Comma-separated sample counts (default: msamples.M from the config)");

  CLI::App* eval = app.add_subcommand("eval", "Re-evaluate a finished run on its test set");
  std::string run_dir;
  std::uint64_t eval_seed = 0;
  eval->add_option("run_dir", run_dir, "Run directory")->required();
  eval->add_option("--seed", eval_seed, "Seed of the partition estimate");

  CLI::App* sample = app.add_subcommand("sample", "Draw samples from a finished run");
  std::string sample_dir, model = "flow", cond_text, sample_out;
  Index n = 1000;
  std::uint64_t sample_seed = 0;
  sample->add_option("run_dir", sample_dir, "Run directory")->required();
  sample->add_option("--model", model, "flow or ebm (Langevin)")->check(CLI::IsMember({"flow", "ebm"}));
  sample->add_option("-n,--count", n, "Number of samples");
  sample->add_option("--cond", cond_text, "Condition for conditional runs, e.g. 0,0");
  sample->add_option("--seed", sample_seed, "Seed");
  sample->add_option("--out", sample_out, "CSV path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const auto config = resolve_config(config_path, overrides, seed);
      if (check_only) {
        std::cout << config.dump(2) << '\n';
        return 0;
      }
      const auto report = run_experiment(config, out_dir);
      std::cout << report.dump(2) << '\n';
    } else if (msamples->parsed()) {
      const auto config = resolve_config(config_path, overrides, seed);
      std::vector<Index> Ms;
      if (!m_list.empty()) {
        for (double v : parse_numbers(m_list)) Ms.push_back(static_cast<Index>(v));
      } else {
        Ms = experiment_config_from_json(config).msamples_M;
      }
      std::cout << msamples_study(config, Ms, out_dir).dump(2) << '\n';
    } else if (eval->parsed()) {
      std::cout << evaluate_run(run_dir, eval_seed).dump(2) << '\n';
    } else if (sample->parsed()) {
      Matrix cond;
      if (!cond_text.empty()) {
        const auto v = parse_numbers(cond_text);
        cond = Eigen::Map<const RowVector>(v.data(), static_cast<Index>(v.size()));
      }
      const Matrix s = sample_run(sample_dir, model == "ebm" ? SampleSource::kEbm : SampleSource::kFlow, n, cond,
                                  sample_seed);
      if (sample_out.empty()) {
        std::cout.precision(17);
        for (Index i = 0; i < s.rows(); ++i) {
          for (Index j = 0; j < s.cols(); ++j) std::cout << (j ? "," : "") << s(i, j);
          std::cout << '\n';
        }
      } else {
        write_points_csv(sample_out, s);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
