// Command-line driver: single runs, ablation grids, hyperparameter sweeps,
// and plot-data aggregation.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coplanner/config.hpp"
#include "coplanner/metrics.hpp"
#include "coplanner/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

// flag > COPLANNER_SEED > config
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed,
                           std::uint64_t config_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("COPLANNER_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw coplanner::ConfigError("COPLANNER_SEED",
                                   "must be a non-negative integer");
    }
  }
  return config_seed;
}

json load_config_doc(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw coplanner::ConfigError("config", "cannot open file " + path);
  }
  try {
    json doc;
    in >> doc;
    return doc;
  } catch (const json::exception& e) {
    throw coplanner::ConfigError("config", std::string("invalid JSON: ") +
                                               e.what());
  }
}

struct RunOutcome {
  bool ok = false;
  std::string error;
};

RunOutcome run_one(const coplanner::RunConfig& cfg, std::uint64_t seed,
                   const fs::path& out_dir, const std::string& group,
                   bool trace) {
  RunOutcome outcome;
  try {
    fs::create_directories(out_dir);
    const json canonical = coplanner::config_to_json(cfg);
    {
      std::ofstream cfg_out(out_dir / "config.json");
      cfg_out << canonical.dump(2) << '\n';
    }
    coplanner::RunManifest manifest;
    manifest.config_hash = coplanner::config_hash_hex(canonical);
    manifest.seed = static_cast<std::int64_t>(seed);
    manifest.artifact_version = kArtifactVersion;
    manifest.env = cfg.env;
    manifest.mode = coplanner::mode_to_string(cfg.trainer.mode);
    manifest.group = group.empty() ? manifest.mode : group;
    manifest.metrics_path = "metrics.jsonl";
    manifest.status = "running";
    manifest.save((out_dir / "manifest.json").string());

    coplanner::MetricSink sink((out_dir / "metrics.jsonl").string());
    std::ofstream trace_out;
    coplanner::DecisionTraceFn trace_fn;
    if (trace) {
      trace_out.open(out_dir / "trace.jsonl");
      trace_fn = [&trace_out](const coplanner::DecisionRecord& rec) {
        nlohmann::ordered_json j;
        j["step"] = rec.step;
        j["phase"] =
            rec.phase == coplanner::DecisionRecord::Phase::kEnv ? "env"
                                                                : "rollout";
        j["alpha"] = rec.alpha;
        j["K"] = rec.candidates;
        j["planner_engaged"] = rec.planner_engaged;
        j["action"] = std::vector<double>(
            rec.action.data(), rec.action.data() + rec.action.size());
        trace_out << j.dump() << '\n';
      };
    }

    const auto start = std::chrono::steady_clock::now();
    coplanner::run_training(cfg, seed, &sink, trace_fn);
    manifest.status = "complete";
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    manifest.save((out_dir / "manifest.json").string());
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.error = e.what();
    try {
      coplanner::RunManifest manifest =
          coplanner::RunManifest::load((out_dir / "manifest.json").string());
      manifest.status = "failed";
      manifest.save((out_dir / "manifest.json").string());
    } catch (...) {
    }
  }
  return outcome;
}

struct Job {
  coplanner::RunConfig cfg;
  std::uint64_t seed = 0;
  fs::path out_dir;
  std::string group;
};

int run_jobs(const std::vector<Job>& jobs, int parallel, bool trace) {
  int failures = 0;
  for (std::size_t start = 0; start < jobs.size();
       start += static_cast<std::size_t>(parallel)) {
    const std::size_t end =
        std::min(jobs.size(), start + static_cast<std::size_t>(parallel));
    std::vector<std::future<RunOutcome>> futures;
    for (std::size_t i = start; i < end; ++i) {
      const Job& job = jobs[i];
      futures.push_back(std::async(std::launch::async, [&job, trace]() {
        return run_one(job.cfg, job.seed, job.out_dir, job.group, trace);
      }));
    }
    for (std::size_t i = start; i < end; ++i) {
      const RunOutcome outcome = futures[i - start].get();
      if (outcome.ok) {
        std::cout << "completed " << jobs[i].out_dir.string() << '\n';
      } else {
        std::cerr << "failed " << jobs[i].out_dir.string() << ": "
                  << outcome.error << '\n';
        ++failures;
      }
    }
  }
  return failures;
}

// "planner.K" style dotted path into the raw config document
void set_config_value(json& doc, const std::string& param, double value) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : param) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  json* node = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &((*node)[parts[i]]);
  }
  const std::string& leaf = parts.back();
  if (value == std::floor(value) && node->contains(leaf) &&
      (*node)[leaf].is_number_integer()) {
    (*node)[leaf] = static_cast<std::int64_t>(value);
  } else {
    (*node)[leaf] = value;
  }
}

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == '.' || c == '/' || c == ' ') c = '_';
  }
  return out;
}

int cmd_plot_data(const std::string& in_dir, const std::string& out_file) {
  std::vector<coplanner::RunSeries> runs;
  for (const auto& entry : fs::recursive_directory_iterator(in_dir)) {
    if (!entry.is_regular_file() ||
        entry.path().filename() != "manifest.json") {
      continue;
    }
    const coplanner::RunManifest manifest =
        coplanner::RunManifest::load(entry.path().string());
    if (manifest.status != "complete") {
      std::cerr << "skipping " << entry.path().parent_path().string()
                << " (status " << manifest.status << ")\n";
      continue;
    }
    coplanner::RunSeries series;
    series.group = manifest.group.empty() ? manifest.mode : manifest.group;
    series.records = coplanner::read_metrics(
        (entry.path().parent_path() / manifest.metrics_path).string());
    runs.push_back(std::move(series));
  }
  if (runs.empty()) {
    std::cerr << "plot-data: no completed runs under " << in_dir << '\n';
    return 1;
  }
  coplanner::write_curves_csv(coplanner::aggregate_curves(runs), out_file);
  std::cout << "wrote " << out_file << " from " << runs.size() << " runs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"COPlanner desk-scale laboratory"};
  app.set_version_flag("--version", kArtifactVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", in_dir, out_file = "curves.csv";
  std::optional<std::uint64_t> seed_flag;
  bool trace = false;
  int jobs = 1;
  std::vector<std::string> modes = {"full", "explore_only", "rollout_only",
                                    "baseline"};
  std::vector<std::uint64_t> seeds = {0};
  std::string param;
  std::vector<double> values;

  CLI::App* run_cmd = app.add_subcommand("run", "execute one training run");
  run_cmd->add_option("--config", config_path, "config JSON path")
      ->required();
  run_cmd->add_option("--seed", seed_flag, "seed (overrides COPLANNER_SEED)");
  run_cmd->add_option("--out", out_dir, "output directory");
  run_cmd->add_flag("--trace", trace, "write per-decision trace.jsonl");

  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "run the mode ablation grid");
  ablate_cmd->add_option("--config", config_path, "config JSON path")
      ->required();
  ablate_cmd->add_option("--modes", modes, "modes to run")->delimiter(',');
  ablate_cmd->add_option("--seeds", seeds, "seeds to run")->delimiter(',');
  ablate_cmd->add_option("--out", out_dir, "output directory");
  ablate_cmd->add_option("--jobs", jobs, "parallel runs");
  ablate_cmd->add_flag("--trace", trace, "write per-decision traces");

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "sweep one config parameter");
  sweep_cmd->add_option("--config", config_path, "config JSON path")
      ->required();
  sweep_cmd->add_option("--param", param,
                        "dotted config path, e.g. planner.alpha_o")
      ->required();
  sweep_cmd->add_option("--values", values, "values to sweep")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--seeds", seeds, "seeds to run")->delimiter(',');
  sweep_cmd->add_option("--out", out_dir, "output directory");
  sweep_cmd->add_option("--jobs", jobs, "parallel runs");

  CLI::App* plot_cmd =
      app.add_subcommand("plot-data", "aggregate learning curves to CSV");
  plot_cmd->add_option("--in", in_dir, "directory of run outputs")
      ->required();
  plot_cmd->add_option("--out", out_file, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const json doc = load_config_doc(config_path);
      coplanner::RunConfig cfg = coplanner::parse_config(doc);
      const std::uint64_t seed = resolve_seed(seed_flag, cfg.seed);
      cfg.seed = seed;
      const RunOutcome outcome = run_one(cfg, seed, out_dir, "", trace);
      if (!outcome.ok) {
        std::cerr << "run failed: " << outcome.error << '\n';
        return 1;
      }
      std::cout << "completed " << out_dir << '\n';
      return 0;
    }
    if (*ablate_cmd) {
      const json doc = load_config_doc(config_path);
      std::vector<Job> jobs_list;
      for (const std::string& mode : modes) {
        json mode_doc = doc;
        mode_doc["trainer"]["mode"] = mode;
        coplanner::RunConfig cfg = coplanner::parse_config(mode_doc);
        for (std::uint64_t seed : seeds) {
          Job job;
          job.cfg = cfg;
          job.cfg.seed = seed;
          job.seed = seed;
          job.out_dir =
              fs::path(out_dir) / (mode + "_seed" + std::to_string(seed));
          job.group = mode;
          jobs_list.push_back(std::move(job));
        }
      }
      return run_jobs(jobs_list, jobs, trace) == 0 ? 0 : 1;
    }
    if (*sweep_cmd) {
      const json doc = load_config_doc(config_path);
      std::vector<Job> jobs_list;
      for (double value : values) {
        json value_doc = doc;
        set_config_value(value_doc, param, value);
        coplanner::RunConfig cfg = coplanner::parse_config(value_doc);
        for (std::uint64_t seed : seeds) {
          Job job;
          job.cfg = cfg;
          job.cfg.seed = seed;
          job.seed = seed;
          std::ostringstream label;
          label << param << "=" << value;
          job.group = label.str();
          job.out_dir = fs::path(out_dir) /
                        (sanitize(label.str()) + "_seed" +
                         std::to_string(seed));
          jobs_list.push_back(std::move(job));
        }
      }
      return run_jobs(jobs_list, jobs, false) == 0 ? 0 : 1;
    }
    if (*plot_cmd) {
      return cmd_plot_data(in_dir, out_file);
    }
  } catch (const coplanner::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
