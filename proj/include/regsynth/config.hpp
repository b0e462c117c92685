// JSON configuration shared by the CLI verbs: one document with every
// model parameter pre-filled, individually overridable by flags.

#pragma once

#include <string>

#include "json.hpp"

#include "regsynth/eval.hpp"
#include "regsynth/ffdreg.hpp"
#include "regsynth/vem.hpp"

namespace regsynth {

struct ToolConfig {
  VemConfig vem;
  RegistrationEnergyConfig reg;
};

nlohmann::json config_to_json(const ToolConfig& cfg);
ToolConfig config_from_json(const nlohmann::json& j);
ToolConfig load_config_file(const std::string& path); // defaults when path empty

} // namespace regsynth
