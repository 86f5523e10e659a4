#include "coplanner/config.hpp"

#include <fstream>
#include <set>

#include "coplanner/env.hpp"

namespace coplanner {

std::string mode_to_string(Mode mode) {
  switch (mode) {
    case Mode::kFull: return "full";
    case Mode::kExploreOnly: return "explore_only";
    case Mode::kRolloutOnly: return "rollout_only";
    case Mode::kBaseline: return "baseline";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "full") return Mode::kFull;
  if (s == "explore_only") return Mode::kExploreOnly;
  if (s == "rollout_only") return Mode::kRolloutOnly;
  if (s == "baseline") return Mode::kBaseline;
  throw std::invalid_argument("unknown mode: " + s);
}

namespace {

// Section reader that tracks the dotted path and rejects unknown keys.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  ~Section() = default;

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const nlohmann::json& require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      throw ConfigError(key_path(key), "missing required field");
    }
    return j_.at(key);
  }

  template <typename T>
  void optional(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key_path(key), "wrong type");
    }
  }

  template <typename T>
  T get(const std::string& key) {
    const nlohmann::json& v = require(key);
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key_path(key), "wrong type");
    }
  }

  nlohmann::json subsection(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      throw ConfigError(key_path(key), "missing required section");
    }
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError(key_path(it.key()), "unknown field");
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Activation activation_from_string(const std::string& s,
                                  const std::string& path) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError(path, "must be \"relu\" or \"tanh\"");
}

std::string activation_to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

UncertaintyReduce reduce_from_string(const std::string& s,
                                     const std::string& path) {
  if (s == "mean") return UncertaintyReduce::kMean;
  if (s == "sum") return UncertaintyReduce::kSum;
  if (s == "max") return UncertaintyReduce::kMax;
  throw ConfigError(path, "must be \"mean\", \"sum\" or \"max\"");
}

std::string reduce_to_string(UncertaintyReduce r) {
  switch (r) {
    case UncertaintyReduce::kMean: return "mean";
    case UncertaintyReduce::kSum: return "sum";
    case UncertaintyReduce::kMax: return "max";
  }
  return "?";
}

void check_positive(std::int64_t v, const std::string& path) {
  if (v < 1) throw ConfigError(path, "must be >= 1");
}

}  // namespace

RunConfig parse_config(const nlohmann::json& doc) {
  RunConfig cfg;
  Section root(doc, "");

  {
    Section env(root.subsection("env"), "env");
    cfg.env = env.get<std::string>("name");
    try {
      EnvSpec::from_name(cfg.env);
    } catch (const std::invalid_argument&) {
      throw ConfigError("env.name", "unknown environment \"" + cfg.env + "\"");
    }
    env.finish();
  }

  root.optional("seed", cfg.seed);

  {
    Section m(root.subsection("model"), "model");
    m.optional("ensemble_size", cfg.model.ensemble_size);
    m.optional("elite_count", cfg.model.elite_count);
    m.optional("hidden", cfg.model.hidden);
    std::string act = activation_to_string(cfg.model.activation);
    m.optional("activation", act);
    cfg.model.activation =
        activation_from_string(act, m.key_path("activation"));
    m.optional("learning_rate", cfg.model.learning_rate);
    m.optional("batch_size", cfg.model.batch_size);
    m.optional("holdout_fraction", cfg.model.holdout_fraction);
    m.optional("max_epochs", cfg.model.max_epochs);
    m.optional("patience", cfg.model.patience);
    m.optional("train_interval", cfg.model.train_interval);
    std::string reduce = reduce_to_string(cfg.model.reduce);
    m.optional("uncertainty_reduce", reduce);
    cfg.model.reduce =
        reduce_from_string(reduce, m.key_path("uncertainty_reduce"));
    m.finish();
    try {
      cfg.model.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("model", e.what());
    }
  }

  {
    Section p(root.subsection("policy"), "policy");
    p.optional("hidden", cfg.policy.hidden);
    std::string act = activation_to_string(cfg.policy.activation);
    p.optional("activation", act);
    cfg.policy.activation =
        activation_from_string(act, p.key_path("activation"));
    p.optional("learning_rate", cfg.policy.learning_rate);
    p.optional("tau", cfg.policy.tau);
    p.optional("gamma", cfg.policy.gamma);
    p.optional("batch_size", cfg.policy.batch_size);
    p.finish();
    try {
      cfg.policy.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("policy", e.what());
    }
  }

  {
    Section pl(root.subsection("planner"), "planner");
    cfg.planner.candidates = pl.get<int>("K");
    cfg.planner.horizon = pl.get<int>("H_p");
    cfg.planner.alpha_c = pl.get<double>("alpha_c");
    cfg.planner.alpha_o = pl.get<double>("alpha_o");
    pl.optional("terminate_on_done", cfg.planner.terminate_on_done);
    pl.optional("skip_first_uncertainty",
                cfg.planner.skip_first_uncertainty);
    pl.optional("normalize_uncertainty", cfg.planner.normalize_uncertainty);
    pl.finish();
    check_positive(cfg.planner.candidates, "planner.K");
    check_positive(cfg.planner.horizon, "planner.H_p");
    if (cfg.planner.alpha_c <= 0.0) {
      throw ConfigError("planner.alpha_c", "must be positive");
    }
    if (cfg.planner.alpha_o <= 0.0) {
      throw ConfigError("planner.alpha_o", "must be positive");
    }
  }

  {
    Section t(root.subsection("trainer"), "trainer");
    cfg.trainer.total_steps = t.get<std::int64_t>("total_steps");
    t.optional("steps_per_epoch", cfg.trainer.steps_per_epoch);
    t.optional("rollout_batch", cfg.trainer.rollout_batch);
    t.optional("updates_per_step", cfg.trainer.updates_per_step);
    std::vector<int> schedule(cfg.trainer.rollout_schedule,
                              cfg.trainer.rollout_schedule + 4);
    t.optional("rollout_schedule", schedule);
    if (schedule.size() != 4) {
      throw ConfigError("trainer.rollout_schedule",
                        "expected [a, b, x, y] with 4 entries");
    }
    std::copy(schedule.begin(), schedule.end(),
              cfg.trainer.rollout_schedule);
    t.optional("real_ratio", cfg.trainer.real_ratio);
    t.optional("eval_interval", cfg.trainer.eval_interval);
    t.optional("eval_episodes", cfg.trainer.eval_episodes);
    std::string mode = mode_to_string(cfg.trainer.mode);
    t.optional("mode", mode);
    try {
      cfg.trainer.mode = mode_from_string(mode);
    } catch (const std::invalid_argument&) {
      throw ConfigError("trainer.mode",
                        "must be full, explore_only, rollout_only or "
                        "baseline");
    }
    t.optional("warmup_steps", cfg.trainer.warmup_steps);
    t.optional("model_buffer_capacity", cfg.trainer.model_buffer_capacity);
    t.optional("planner_at_eval", cfg.trainer.planner_at_eval);
    t.optional("ground_truth_rollout_reward",
               cfg.trainer.ground_truth_rollout_reward);
    t.finish();
    check_positive(cfg.trainer.total_steps, "trainer.total_steps");
    check_positive(cfg.trainer.steps_per_epoch, "trainer.steps_per_epoch");
    check_positive(cfg.trainer.rollout_batch, "trainer.rollout_batch");
    if (cfg.trainer.updates_per_step < 0) {
      throw ConfigError("trainer.updates_per_step", "must be >= 0");
    }
    const int* s = cfg.trainer.rollout_schedule;
    if (!(s[0] < s[1])) {
      throw ConfigError("trainer.rollout_schedule", "requires a < b");
    }
    if (!(s[2] <= s[3]) || s[2] < 1) {
      throw ConfigError("trainer.rollout_schedule",
                        "requires 1 <= x <= y");
    }
    if (cfg.trainer.real_ratio < 0.0 || cfg.trainer.real_ratio > 1.0) {
      throw ConfigError("trainer.real_ratio", "must be in [0, 1]");
    }
    check_positive(cfg.trainer.eval_interval, "trainer.eval_interval");
    check_positive(cfg.trainer.eval_episodes, "trainer.eval_episodes");
    if (cfg.trainer.warmup_steps < 0) {
      throw ConfigError("trainer.warmup_steps", "must be >= 0");
    }
    check_positive(cfg.trainer.model_buffer_capacity,
                   "trainer.model_buffer_capacity");
  }

  {
    Section me(root.subsection("metrics"), "metrics");
    me.optional("record_walltime", cfg.metrics.record_walltime);
    me.finish();
  }

  root.finish();
  return cfg;
}

nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["env"] = {{"name", cfg.env}};
  j["seed"] = cfg.seed;
  j["model"] = {
      {"ensemble_size", cfg.model.ensemble_size},
      {"elite_count", cfg.model.elite_count},
      {"hidden", cfg.model.hidden},
      {"activation", activation_to_string(cfg.model.activation)},
      {"learning_rate", cfg.model.learning_rate},
      {"batch_size", cfg.model.batch_size},
      {"holdout_fraction", cfg.model.holdout_fraction},
      {"max_epochs", cfg.model.max_epochs},
      {"patience", cfg.model.patience},
      {"train_interval", cfg.model.train_interval},
      {"uncertainty_reduce", reduce_to_string(cfg.model.reduce)},
  };
  j["policy"] = {
      {"hidden", cfg.policy.hidden},
      {"activation", activation_to_string(cfg.policy.activation)},
      {"learning_rate", cfg.policy.learning_rate},
      {"tau", cfg.policy.tau},
      {"gamma", cfg.policy.gamma},
      {"batch_size", cfg.policy.batch_size},
  };
  j["planner"] = {
      {"K", cfg.planner.candidates},
      {"H_p", cfg.planner.horizon},
      {"alpha_c", cfg.planner.alpha_c},
      {"alpha_o", cfg.planner.alpha_o},
      {"terminate_on_done", cfg.planner.terminate_on_done},
      {"skip_first_uncertainty", cfg.planner.skip_first_uncertainty},
      {"normalize_uncertainty", cfg.planner.normalize_uncertainty},
  };
  j["trainer"] = {
      {"total_steps", cfg.trainer.total_steps},
      {"steps_per_epoch", cfg.trainer.steps_per_epoch},
      {"rollout_batch", cfg.trainer.rollout_batch},
      {"updates_per_step", cfg.trainer.updates_per_step},
      {"rollout_schedule",
       std::vector<int>(cfg.trainer.rollout_schedule,
                        cfg.trainer.rollout_schedule + 4)},
      {"real_ratio", cfg.trainer.real_ratio},
      {"eval_interval", cfg.trainer.eval_interval},
      {"eval_episodes", cfg.trainer.eval_episodes},
      {"mode", mode_to_string(cfg.trainer.mode)},
      {"warmup_steps", cfg.trainer.warmup_steps},
      {"model_buffer_capacity", cfg.trainer.model_buffer_capacity},
      {"planner_at_eval", cfg.trainer.planner_at_eval},
      {"ground_truth_rollout_reward",
       cfg.trainer.ground_truth_rollout_reward},
  };
  j["metrics"] = {{"record_walltime", cfg.metrics.record_walltime}};
  return j;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " +
                             e.what());
  }
  return parse_config(doc);
}

}  // namespace coplanner
