#include "pdflow/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pdflow/datasets.hpp"

namespace pdflow {

using nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : "\n") + s;
  return out;
}

// Keys allowed in addition to the defaults, with the default used when absent.
const std::map<std::string, json>& optional_keys() {
  static const std::map<std::string, json> keys = {
      {"train.w_for", 1.0}, {"train.w_back", 1.0}, {"train.lambda_floor", 1e-6}};
  return keys;
}

bool same_kind(const json& def, const json& v) {
  if (def.is_null()) return true;  // checked by the validator
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

const char* kind_name(const json& def) {
  if (def.is_number_integer()) return "an integer";
  if (def.is_number()) return "a number";
  if (def.is_boolean()) return "a boolean";
  if (def.is_string()) return "a string";
  if (def.is_array()) return "an array";
  if (def.is_object()) return "an object";
  return "a value";
}

void merge_at(json& base, const json& patch, const std::string& prefix, std::vector<std::string>& problems) {
  if (!patch.is_object()) {
    problems.push_back((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) {
      const auto opt = optional_keys().find(key);
      if (opt == optional_keys().end()) {
        problems.push_back(key + ": unknown key");
        continue;
      }
      if (!same_kind(opt->second, it.value())) {
        problems.push_back(key + ": expected " + kind_name(opt->second));
        continue;
      }
      base[it.key()] = it.value();
      continue;
    }
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_at(slot, it.value(), key, problems);
    } else if (!same_kind(slot, it.value())) {
      problems.push_back(key + ": expected " + kind_name(slot));
    } else {
      slot = it.value();
    }
  }
}

const json* find_path(const json& root, const std::string& dotted, json::json_pointer& ptr) {
  std::string pointer;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) pointer += "/" + part;
  ptr = json::json_pointer(pointer);
  return root.contains(ptr) ? &root.at(ptr) : nullptr;
}

struct Checker {
  const json& c;
  std::vector<std::string>& out;

  const json* get(const std::string& dotted) const {
    json::json_pointer p;
    return find_path(c, dotted, p);
  }
  double num(const std::string& k) const {
    const json* v = get(k);
    return v != nullptr && v->is_number() ? v->get<double>() : 0.0;
  }
  std::string str(const std::string& k) const {
    const json* v = get(k);
    return v != nullptr && v->is_string() ? v->get<std::string>() : "";
  }
  void positive(const std::string& k) const {
    if (!(num(k) > 0)) out.push_back(k + ": must be positive");
  }
  void at_least(const std::string& k, double lo) const {
    if (!(num(k) >= lo)) {
      std::ostringstream msg;
      msg << k << ": must be at least " << lo;
      out.push_back(msg.str());
    }
  }
  void one_of(const std::string& k, const std::set<std::string>& allowed) const {
    if (allowed.count(str(k)) == 0) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      out.push_back(k + ": '" + str(k) + "' is not one of {" + list + "}");
    }
  }
};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error("invalid configuration:\n" + join_lines(problems)), problems_(std::move(problems)) {}

json default_config() {
  const FlowConfig f;
  const EnergyConfig e;
  const TrainConfig t;
  const WarmStartConfig w;
  const LangevinConfig l;
  return {
      {"schema_version", kConfigSchemaVersion},
      {"experiment", "density2d"},
      {"seed", 0},
      {"dataset", {{"name", "gmm_ring"}, {"n_train", 1000}, {"n_test", 10000}, {"seed", 0}, {"moons_noise", 0.05}}},
      {"sbi",
       {{"task", "two_moons"},
        {"simulations", 10000},
        {"test_simulations", 1000},
        {"u0", nullptr},
        {"prior_lo", nullptr},
        {"prior_hi", nullptr},
        {"radius", nullptr},
        {"posterior_samples", 5000},
        {"c2st_test_fraction", 0.3},
        {"langevin", true}}},
      {"flow",
       {{"transforms", f.transforms},
        {"bins", f.bins},
        {"tail_bound", f.tail_bound},
        {"hidden", f.hidden},
        {"hidden_layers", f.hidden_layers},
        {"leading_affine", f.leading_affine},
        {"output_init_scale", f.output_init_scale}}},
      {"ebm",
       {{"blocks", e.blocks},
        {"hidden", e.hidden},
        {"temperature", e.temperature},
        {"film_layers", e.film_layers},
        {"spectral_norm", e.spectral_norm},
        {"init_power_iterations", e.init_power_iterations}}},
      {"train",
       {{"mode", "dual"},
        {"variant", "negative_nll"},
        {"steps", 25000},
        {"batch_size", 0},
        {"lr_flow", t.lr_flow},
        {"lr_ebm", t.lr_ebm},
        {"lr_lambda", t.lr_lambda},
        {"lr_norm", t.lr_norm},
        {"eps_zeta", t.eps_zeta},
        {"lambda_init", t.lambda_init},
        {"M", t.M},
        {"zeta_refresh", t.zeta_refresh},
        {"zeta_source", "independent"},
        {"flow_samples", t.flow_samples}}},
      {"warm_start", {{"iterations", 0}, {"batch", w.batch}, {"lr", w.lr}, {"check_every", w.check_every}}},
      {"eval",
       {{"every", 500},
        {"zeta_M", 10000},
        {"grid_resolution", 64},
        {"grids", true},
        {"grid_padding", 0.1},
        {"checkpoint_every", 0}}},
      {"langevin", {{"steps", l.steps}, {"step_size", l.step_size}, {"init", "flow"}, {"samples", 5000}}},
      {"compare", {{"arms", {"dual", "flow_only"}}}},
      {"weighted_sum_grid", {{"w_for", {0.2, 0.5, 1.0, 2.0, 5.0}}, {"w_back", {0.2, 0.5, 1.0, 2.0, 5.0}}}},
      {"msamples", {{"M", {100, 1000, 10000}}}},
  };
}

json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError({origin + ": " + e.what()});
  }
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path + ": cannot open"});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void merge_config(json& base, const json& patch, std::vector<std::string>& problems) {
  merge_at(base, patch, "", problems);
}

void apply_override(json& config, const std::string& assignment, std::vector<std::string>& problems) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    problems.push_back("--set " + assignment + ": expected key=value");
    return;
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  // Build the nested patch {"a": {"b": value}} and reuse the merge checks.
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_at(config, patch, "", problems);
}

std::vector<std::string> validate_config(const json& c) {
  std::vector<std::string> out;
  const Checker k{c, out};
  if (!c.value("schema_version", json()).is_number_integer() || c["schema_version"] != kConfigSchemaVersion) {
    out.push_back("schema_version: expected " + std::to_string(kConfigSchemaVersion));
  }
  k.one_of("experiment", {"density2d", "gmm40_compare", "sbi", "weighted_sum_grid"});
  k.at_least("seed", 0);
  const bool sbi = k.str("experiment") == "sbi";

  k.at_least("dataset.seed", 0);
  if (!sbi) {
    if (!is_synthetic_name(k.str("dataset.name"))) out.push_back("dataset.name: unknown dataset '" + k.str("dataset.name") + "'");
    k.at_least("dataset.n_train", 1);
    k.at_least("dataset.n_test", 1);
  }
  if (!(k.num("dataset.moons_noise") >= 0)) out.push_back("dataset.moons_noise: must be non-negative");

  if (sbi) {
    k.one_of("sbi.task", {"gaussian_mixture", "two_moons"});
    k.at_least("sbi.simulations", 1);
    k.at_least("sbi.test_simulations", 1);
    k.at_least("sbi.posterior_samples", 2);
    auto pair_or_null = [&](const std::string& key) {
      const json* v = k.get(key);
      if (v == nullptr || v->is_null()) return false;
      bool ok = v->is_array() && v->size() == 2;
      if (ok) {
        for (const auto& x : *v) ok = ok && x.is_number();
      }
      if (!ok) out.push_back(key + ": expected null or two numbers");
      return ok;
    };
    pair_or_null("sbi.u0");
    if (pair_or_null("sbi.prior_lo") && pair_or_null("sbi.prior_hi")) {
      const json& lo = *k.get("sbi.prior_lo");
      const json& hi = *k.get("sbi.prior_hi");
      if (!(lo[0].get<double>() < hi[0].get<double>() && lo[1].get<double>() < hi[1].get<double>())) {
        out.push_back("sbi.prior_lo: must lie below sbi.prior_hi");
      }
    }
    const json* r = k.get("sbi.radius");
    if (r != nullptr && !r->is_null() && !(r->is_number() && r->get<double>() > 0)) {
      out.push_back("sbi.radius: expected null or a positive number");
    }
    const double f = k.num("sbi.c2st_test_fraction");
    if (!(f > 0 && f < 1)) out.push_back("sbi.c2st_test_fraction: must lie in (0, 1)");
  }

  k.at_least("flow.transforms", 1);
  k.at_least("flow.bins", 2);
  k.positive("flow.tail_bound");
  k.at_least("flow.hidden", 1);
  k.at_least("flow.hidden_layers", 1);
  if (!(k.num("flow.output_init_scale") >= 0)) out.push_back("flow.output_init_scale: must be non-negative");

  k.at_least("ebm.blocks", 1);
  k.at_least("ebm.hidden", 1);
  k.positive("ebm.temperature");
  k.at_least("ebm.film_layers", 1);
  k.at_least("ebm.init_power_iterations", 1);

  k.one_of("train.mode", {"dual", "weighted_sum", "flow_only"});
  k.one_of("train.variant", {"standard", "negative_nll"});
  k.at_least("train.steps", 1);
  k.at_least("train.batch_size", 0);
  for (const char* lr : {"train.lr_flow", "train.lr_ebm", "train.lr_lambda", "train.lr_norm", "train.eps_zeta"}) {
    k.positive(lr);
  }
  const bool negative_nll = k.str("train.variant") == "negative_nll";
  if (negative_nll && k.str("train.mode") == "dual") {
    k.positive("train.lambda_init");
  } else {
    k.at_least("train.lambda_init", 0);
  }
  k.at_least("train.M", 1);
  k.at_least("train.zeta_refresh", 1);
  k.one_of("train.zeta_source", {"independent", "same_batch"});
  k.at_least("train.flow_samples", 0);
  const bool weighted = k.str("train.mode") == "weighted_sum" || k.str("experiment") == "weighted_sum_grid";
  for (const char* w : {"train.w_for", "train.w_back"}) {
    if (k.get(w) == nullptr) continue;
    if (!weighted) {
      out.push_back(std::string(w) + ": only valid with train.mode = weighted_sum");
    } else {
      k.positive(w);
    }
  }
  if (k.get("train.lambda_floor") != nullptr) {
    if (!negative_nll) {
      out.push_back("train.lambda_floor: only valid with train.variant = negative_nll");
    } else {
      k.at_least("train.lambda_floor", 0);
    }
  }

  k.at_least("warm_start.iterations", 0);
  k.at_least("warm_start.batch", 1);
  k.positive("warm_start.lr");
  k.at_least("warm_start.check_every", 1);

  k.at_least("eval.every", 1);
  k.at_least("eval.zeta_M", 1);
  k.at_least("eval.grid_resolution", 2);
  if (!(k.num("eval.grid_padding") >= 0)) out.push_back("eval.grid_padding: must be non-negative");
  k.at_least("eval.checkpoint_every", 0);

  k.at_least("langevin.steps", 1);
  k.positive("langevin.step_size");
  k.one_of("langevin.init", {"flow", "standard_normal"});
  k.at_least("langevin.samples", 1);

  const json* arms = k.get("compare.arms");
  if (arms != nullptr && arms->is_array()) {
    if (arms->empty()) out.push_back("compare.arms: must not be empty");
    std::set<std::string> seen;
    for (const auto& a : *arms) {
      const std::string name = a.is_string() ? a.get<std::string>() : "";
      if (name != "dual" && name != "weighted_sum" && name != "flow_only") {
        out.push_back("compare.arms: '" + a.dump() + "' is not one of {dual, flow_only, weighted_sum}");
      } else if (!seen.insert(name).second) {
        out.push_back("compare.arms: '" + name + "' listed twice");
      }
    }
  }
  for (const char* key : {"weighted_sum_grid.w_for", "weighted_sum_grid.w_back"}) {
    const json* v = k.get(key);
    if (v == nullptr || !v->is_array()) continue;
    if (v->empty()) out.push_back(std::string(key) + ": must not be empty");
    for (const auto& x : *v) {
      if (!x.is_number() || !(x.get<double>() > 0)) out.push_back(std::string(key) + ": entries must be positive numbers");
    }
  }
  const json* ms = k.get("msamples.M");
  if (ms != nullptr && ms->is_array()) {
    if (ms->empty()) out.push_back("msamples.M: must not be empty");
    for (const auto& x : *ms) {
      if (!x.is_number_integer() || x.get<long long>() < 1) out.push_back("msamples.M: entries must be integers >= 1");
    }
  }
  return out;
}

json resolve_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                    std::optional<std::uint64_t> seed) {
  json config = default_config();
  std::vector<std::string> problems;
  if (path) merge_config(config, load_config_file(*path), problems);
  for (const auto& o : overrides) apply_override(config, o, problems);
  if (seed) config["seed"] = *seed;
  for (auto& p : validate_config(config)) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(problems);
  return config;
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "dual") return TrainMode::kDual;
  if (s == "weighted_sum") return TrainMode::kWeightedSum;
  if (s == "flow_only") return TrainMode::kFlowOnly;
  throw Error("unknown training mode '" + s + "'");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kDual:
      return "dual";
    case TrainMode::kWeightedSum:
      return "weighted_sum";
    case TrainMode::kFlowOnly:
      return "flow_only";
  }
  return "?";
}

ExperimentConfig experiment_config_from_json(const json& c) {
  const auto problems = validate_config(c);
  if (!problems.empty()) throw ConfigError(problems);
  ExperimentConfig e;
  e.experiment = c["experiment"];
  e.seed = c["seed"];

  const json& d = c["dataset"];
  e.dataset = d["name"];
  e.n_train = d["n_train"];
  e.n_test = d["n_test"];
  e.data_seed = d["seed"];
  e.moons_noise = d["moons_noise"];

  const json& s = c["sbi"];
  e.sbi_task = s["task"];
  e.simulations = s["simulations"];
  e.test_simulations = s["test_simulations"];
  auto pair = [&](const char* key) -> std::optional<RowVector> {
    if (s[key].is_null()) return std::nullopt;
    RowVector v(2);
    v << s[key][0].get<double>(), s[key][1].get<double>();
    return v;
  };
  e.u0 = pair("u0");
  e.prior_lo = pair("prior_lo");
  e.prior_hi = pair("prior_hi");
  e.radius = s["radius"].is_null() ? 0.0 : s["radius"].get<double>();
  e.posterior_samples = s["posterior_samples"];
  e.c2st_test_fraction = s["c2st_test_fraction"];
  e.sbi_langevin = s["langevin"];

  const json& f = c["flow"];
  e.flow.transforms = f["transforms"];
  e.flow.bins = f["bins"];
  e.flow.tail_bound = f["tail_bound"];
  e.flow.hidden = f["hidden"];
  e.flow.hidden_layers = f["hidden_layers"];
  e.flow.leading_affine = f["leading_affine"];
  e.flow.output_init_scale = f["output_init_scale"];

  const json& m = c["ebm"];
  e.ebm.blocks = m["blocks"];
  e.ebm.hidden = m["hidden"];
  e.ebm.temperature = m["temperature"];
  e.ebm.film_layers = m["film_layers"];
  e.ebm.spectral_norm = m["spectral_norm"];
  e.ebm.init_power_iterations = m["init_power_iterations"];

  const json& t = c["train"];
  e.train.mode = parse_train_mode(t["mode"]);
  e.train.variant = t["variant"] == "negative_nll" ? Variant::kNegativeNll : Variant::kStandard;
  e.steps = t["steps"];
  e.batch_size = t["batch_size"];
  e.train.lr_flow = t["lr_flow"];
  e.train.lr_ebm = t["lr_ebm"];
  e.train.lr_lambda = t["lr_lambda"];
  e.train.lr_norm = t["lr_norm"];
  e.train.eps_zeta = t["eps_zeta"];
  e.train.lambda_init = t["lambda_init"];
  e.train.M = t["M"];
  e.train.zeta_refresh = t["zeta_refresh"];
  e.train.zeta_source = t["zeta_source"] == "same_batch" ? ZetaSource::kSameBatch : ZetaSource::kIndependent;
  e.train.flow_samples = t["flow_samples"];
  e.train.w_for = t.value("w_for", optional_keys().at("train.w_for").get<double>());
  e.train.w_back = t.value("w_back", optional_keys().at("train.w_back").get<double>());
  e.train.lambda_floor = t.value("lambda_floor", optional_keys().at("train.lambda_floor").get<double>());

  const json& w = c["warm_start"];
  e.warm_start.iterations = w["iterations"];
  e.warm_start.batch = w["batch"];
  e.warm_start.lr = w["lr"];
  e.warm_start.check_every = w["check_every"];

  const json& v = c["eval"];
  e.eval_every = v["every"];
  e.eval_zeta_M = v["zeta_M"];
  e.grid_resolution = v["grid_resolution"];
  e.write_grids = v["grids"];
  e.grid_padding = v["grid_padding"];
  e.checkpoint_every = v["checkpoint_every"];

  const json& l = c["langevin"];
  e.langevin.steps = l["steps"];
  e.langevin.step_size = l["step_size"];
  e.langevin.init = l["init"] == "flow" ? LangevinInit::kFlow : LangevinInit::kStandardNormal;
  e.langevin_samples = l["samples"];

  e.compare_arms = c["compare"]["arms"].get<std::vector<std::string>>();
  e.grid_w_for = c["weighted_sum_grid"]["w_for"].get<std::vector<double>>();
  e.grid_w_back = c["weighted_sum_grid"]["w_back"].get<std::vector<double>>();
  for (const auto& x : c["msamples"]["M"]) e.msamples_M.push_back(x.get<Index>());
  return e;
}

}  // namespace pdflow
