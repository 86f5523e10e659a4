#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "coplanner/ensemble.hpp"
#include "coplanner/sac.hpp"

namespace coplanner {

// Validation failure carrying the dotted path of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct PlannerSettings {
  int candidates = 5;   // K
  int horizon = 5;      // H_p
  double alpha_c = 2.0;
  double alpha_o = 1.0;
  bool terminate_on_done = true;
  bool skip_first_uncertainty = false;
  bool normalize_uncertainty = false;
};

enum class Mode { kFull, kExploreOnly, kRolloutOnly, kBaseline };

std::string mode_to_string(Mode mode);
Mode mode_from_string(const std::string& s);

struct TrainerSettings {
  std::int64_t total_steps = 15000;
  int steps_per_epoch = 1000;
  int rollout_batch = 400;   // M initial states per rollout phase
  int updates_per_step = 5;  // G
  int rollout_schedule[4] = {1, 10, 1, 3};  // [a, b, x, y]
  double real_ratio = 0.0;
  int eval_interval = 1000;
  int eval_episodes = 10;
  Mode mode = Mode::kFull;
  int warmup_steps = 1000;
  std::int64_t model_buffer_capacity = 100000;
  bool planner_at_eval = false;
  bool ground_truth_rollout_reward = false;  // diagnostics only
};

struct MetricsSettings {
  bool record_walltime = false;
};

struct RunConfig {
  std::string env = "pendulum";
  std::uint64_t seed = 0;
  ModelTrainConfig model;
  PolicyConfig policy;
  PlannerSettings planner;
  TrainerSettings trainer;
  MetricsSettings metrics;
};

// Strict parse: unknown keys and missing required fields raise ConfigError
// with the dotted field path.
RunConfig parse_config(const nlohmann::json& doc);

// Canonical serialization: every field materialized. parse(serialize(x))
// round-trips exactly.
nlohmann::ordered_json config_to_json(const RunConfig& cfg);

RunConfig load_config_file(const std::string& path);

}  // namespace coplanner
