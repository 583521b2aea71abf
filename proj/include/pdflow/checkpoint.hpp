#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "pdflow/energy.hpp"
#include "pdflow/flow.hpp"

namespace pdflow {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const FlowConfig& c);
nlohmann::json to_json(const EnergyConfig& c);
FlowConfig flow_config_from_json(const nlohmann::json& j);
EnergyConfig energy_config_from_json(const nlohmann::json& j);

/// Self-describing model snapshot: hyperparameters, parameter layout, flat values and,
/// for energy models, the power-iteration vectors. Doubles are written with full precision
/// so a load reproduces the saved model exactly.
nlohmann::json checkpoint_json(const FlowModel& flow);
nlohmann::json checkpoint_json(const EnergyModel& ebm);
FlowModel flow_from_checkpoint(const nlohmann::json& j);
EnergyModel energy_from_checkpoint(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const nlohmann::json& checkpoint);
nlohmann::json load_checkpoint(const std::string& path);

}  // namespace pdflow
