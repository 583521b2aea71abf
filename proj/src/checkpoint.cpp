#include "pdflow/checkpoint.hpp"

#include <fstream>

namespace pdflow {

using nlohmann::json;

namespace {

json layout_json(const ParamVector& p) {
  json out = json::array();
  for (const auto& r : p.layout()) out.push_back({{"name", r.name}, {"offset", r.offset}, {"size", r.size}});
  return out;
}

json values_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

json header(const char* kind) {
  return {{"format", "pdflow-checkpoint"}, {"version", kCheckpointVersion}, {"kind", kind}};
}

void check_header(const json& j, const char* kind) {
  if (!j.is_object() || j.value("format", "") != "pdflow-checkpoint") throw Error("checkpoint: not a checkpoint");
  const int version = j.value("version", -1);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  }
  if (j.value("kind", "") != kind) {
    throw Error(std::string("checkpoint: expected kind '") + kind + "', found '" + j.value("kind", "") + "'");
  }
}

void restore_params(ParamVector& p, const json& j) {
  if (j.at("layout") != layout_json(p)) throw Error("checkpoint: parameter layout does not match the configuration");
  const Vector v = vector_from(j.at("params"));
  if (v.size() != p.size()) throw Error("checkpoint: parameter count mismatch");
  p.assign(v);
}

}  // namespace

json to_json(const FlowConfig& c) {
  return {{"dim", c.dim},
          {"cond_dim", c.cond_dim},
          {"transforms", c.transforms},
          {"bins", c.bins},
          {"tail_bound", c.tail_bound},
          {"hidden", c.hidden},
          {"hidden_layers", c.hidden_layers},
          {"leading_affine", c.leading_affine},
          {"output_init_scale", c.output_init_scale}};
}

json to_json(const EnergyConfig& c) {
  return {{"dim", c.dim},
          {"cond_dim", c.cond_dim},
          {"hidden", c.hidden},
          {"blocks", c.blocks},
          {"temperature", c.temperature},
          {"film_layers", c.film_layers},
          {"spectral_norm", c.spectral_norm},
          {"init_power_iterations", c.init_power_iterations}};
}

FlowConfig flow_config_from_json(const json& j) {
  FlowConfig c;
  c.dim = j.value("dim", c.dim);
  c.cond_dim = j.value("cond_dim", c.cond_dim);
  c.transforms = j.value("transforms", c.transforms);
  c.bins = j.value("bins", c.bins);
  c.tail_bound = j.value("tail_bound", c.tail_bound);
  c.hidden = j.value("hidden", c.hidden);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.leading_affine = j.value("leading_affine", c.leading_affine);
  c.output_init_scale = j.value("output_init_scale", c.output_init_scale);
  return c;
}

EnergyConfig energy_config_from_json(const json& j) {
  EnergyConfig c;
  c.dim = j.value("dim", c.dim);
  c.cond_dim = j.value("cond_dim", c.cond_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.blocks = j.value("blocks", c.blocks);
  c.temperature = j.value("temperature", c.temperature);
  c.film_layers = j.value("film_layers", c.film_layers);
  c.spectral_norm = j.value("spectral_norm", c.spectral_norm);
  c.init_power_iterations = j.value("init_power_iterations", c.init_power_iterations);
  return c;
}

json checkpoint_json(const FlowModel& flow) {
  json j = header("flow");
  j["config"] = to_json(flow.config());
  j["layout"] = layout_json(flow.params());
  j["params"] = values_json(flow.params().values());
  return j;
}

json checkpoint_json(const EnergyModel& ebm) {
  json j = header("ebm");
  j["config"] = to_json(ebm.config());
  j["layout"] = layout_json(ebm.params());
  j["params"] = values_json(ebm.params().values());
  json ps = json::array();
  for (const auto& s : ebm.power_states()) ps.push_back({{"u", values_json(s.u)}, {"v", values_json(s.v)}});
  j["power_states"] = ps;
  return j;
}

FlowModel flow_from_checkpoint(const json& j) {
  check_header(j, "flow");
  FlowModel flow(flow_config_from_json(j.at("config")), 0);
  restore_params(flow.params(), j);
  return flow;
}

EnergyModel energy_from_checkpoint(const json& j) {
  check_header(j, "ebm");
  EnergyModel ebm(energy_config_from_json(j.at("config")), 0);
  restore_params(ebm.params(), j);
  std::vector<nn::PowerState> states;
  for (const auto& s : j.at("power_states")) states.push_back({vector_from(s.at("u")), vector_from(s.at("v"))});
  ebm.set_power_states(states);
  return ebm;
}

void save_checkpoint(const std::string& path, const json& checkpoint) {
  std::ofstream out(path);
  if (!out) throw Error("save_checkpoint: cannot open " + path);
  out << checkpoint.dump() << '\n';
  if (!out) throw Error("save_checkpoint: write failed for " + path);
}

json load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_checkpoint: cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("load_checkpoint: " + path + ": " + e.what());
  }
}

}  // namespace pdflow
