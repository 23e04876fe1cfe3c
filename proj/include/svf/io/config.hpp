#pragma once

// JSON forms of the configuration types. Every top-level document carries
// "schema_version"; missing fields take their defaults, unknown fields are
// rejected.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "svf/sweeps.hpp"
#include "svf/toy_model.hpp"
#include "svf/trainer.hpp"

namespace svf::io {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TargetSpec target = TargetSpec::linear_pairs(1, 1, 1.0, 0.0);
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const TargetSpec& t);
nlohmann::json to_json(const RunConfig& c);
nlohmann::json to_json(const SweepSpec& s);

ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
// Either an array of {"query", "key", "logit"} or {"preset": "four_pairs"}.
TargetSpec target_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);
SweepSpec sweep_spec_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
SweepSpec load_sweep_spec(const std::filesystem::path& path);

// Throws ConfigError unless j["schema_version"] == kSchemaVersion.
void check_schema_version(const nlohmann::json& j, const std::string& what);

}  // namespace svf::io
