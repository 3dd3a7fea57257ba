#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hscm/hierarchy.hpp"
#include "hscm/simgen.hpp"

namespace hscm {

/// Run configuration read from TOML:
///
///   [simulation]        SimConfig fields
///   [estimation]        EstimateOptions fields
///   [estimation.cam]    CamConfig fields
///   [estimation.smooth] SmoothSpec fields
///   [benchmark]         replicates
///   [[setting]]         benchmark settings; missing fields come from [simulation]
///
/// Unknown keys and mistyped values raise ConfigError.
struct RunConfig {
  SimConfig simulation;
  EstimateOptions estimation;
  int replicates = 20;
  std::vector<SimConfig> settings;

  nlohmann::json to_json() const;
};

RunConfig parse_config(std::string_view toml_text, const std::string& source);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace hscm
