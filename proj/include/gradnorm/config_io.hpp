#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "gradnorm/harness.hpp"

namespace gradnorm {

inline constexpr int kFormatVersion = 1;

/// Raised for malformed or invalid configuration; the message names the field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Full resolved configuration, including every seed.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Parses a configuration document. Missing keys keep their defaults; unknown
/// keys, wrong types and strategy fields that do not belong to the selected
/// strategy are errors.
ExperimentConfig config_from_json(const nlohmann::json& doc);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

StrategyKind parse_strategy(const std::string& name);

}  // namespace gradnorm
