#include "coplanner/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace coplanner {

namespace {
constexpr int kMetricSchemaVersion = 1;
}

nlohmann::ordered_json metric_to_json(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = kMetricSchemaVersion;
  j["env_steps"] = r.env_steps;
  j["eval_return_mean"] = r.eval_return_mean;
  j["eval_return_std"] = r.eval_return_std;
  j["model_holdout_mse"] = r.model_holdout_mse;
  j["rollout_uncertainty"] = r.rollout_uncertainty;
  j["wall_seconds"] = r.wall_seconds;
  j["mode"] = r.mode;
  j["seed"] = r.seed;
  return j;
}

MetricRecord metric_from_json(const nlohmann::json& j) {
  MetricRecord r;
  r.env_steps = j.at("env_steps").get<std::int64_t>();
  r.eval_return_mean = j.at("eval_return_mean").get<double>();
  r.eval_return_std = j.at("eval_return_std").get<double>();
  r.model_holdout_mse = j.at("model_holdout_mse").get<double>();
  r.rollout_uncertainty = j.at("rollout_uncertainty").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.mode = j.at("mode").get<std::string>();
  r.seed = j.at("seed").get<std::int64_t>();
  return r;
}

MetricSink::MetricSink(const std::string& path)
    : path_(path), out_(path, std::ios::app) {
  if (!out_) throw std::runtime_error("MetricSink: cannot open " + path);
}

void MetricSink::write(const MetricRecord& r) {
  out_ << metric_to_json(r).dump() << '\n';
  out_.flush();
}

std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_metrics: cannot open " + path);
  std::vector<MetricRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(metric_from_json(nlohmann::json::parse(line)));
  }
  return records;
}

void metrics_to_csv(const std::vector<MetricRecord>& records,
                    const std::string& out_path) {
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("metrics_to_csv: cannot open " + out_path);
  out << "env_steps,eval_return_mean,eval_return_std,model_holdout_mse,"
         "rollout_uncertainty,wall_seconds,mode,seed\n";
  for (const auto& r : records) {
    out << r.env_steps << ',' << r.eval_return_mean << ','
        << r.eval_return_std << ',' << r.model_holdout_mse << ','
        << r.rollout_uncertainty << ',' << r.wall_seconds << ',' << r.mode
        << ',' << r.seed << '\n';
  }
}

double model_prediction_error(const EnsembleModel& model,
                              const std::vector<Transition>& holdout) {
  if (holdout.empty()) {
    throw std::invalid_argument("model_prediction_error: empty holdout");
  }
  double total = 0.0;
  for (const Transition& t : holdout) {
    const Vector pred = elite_mean_next(model, t.obs, t.action);
    total += (pred - t.next_obs).squaredNorm() /
             static_cast<double>(model.obs_dim);
  }
  return total / static_cast<double>(holdout.size());
}

double rollout_uncertainty_metric(const EnsembleModel& model,
                                  const ModelBuffer& buffer) {
  if (buffer.empty()) {
    throw std::invalid_argument("rollout_uncertainty_metric: empty buffer");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const ModelTransition& m = buffer.at(i);
    total += disagreement(model, m.t.obs, m.t.action);
  }
  return total / static_cast<double>(buffer.size());
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["artifact_version"] = artifact_version;
  j["env"] = env;
  j["mode"] = mode;
  j["group"] = group;
  j["metrics_path"] = metrics_path;
  j["status"] = status;
  j["wall_seconds"] = wall_seconds;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::int64_t>();
  m.artifact_version = j.at("artifact_version").get<std::string>();
  m.env = j.at("env").get<std::string>();
  m.mode = j.value("mode", "");
  m.group = j.value("group", "");
  m.metrics_path = j.at("metrics_path").get<std::string>();
  m.status = j.at("status").get<std::string>();
  m.wall_seconds = j.value("wall_seconds", 0.0);
  return m;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("RunManifest: cannot open " + path);
  out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("RunManifest: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

std::string config_hash_hex(const nlohmann::json& config) {
  // nlohmann::json stores objects sorted by key, so dump() is canonical
  const std::string canonical = nlohmann::json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : canonical) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<CurvePoint> aggregate_curves(const std::vector<RunSeries>& runs) {
  std::map<std::pair<std::string, std::int64_t>, std::vector<double>> cells;
  for (const RunSeries& run : runs) {
    for (const MetricRecord& r : run.records) {
      cells[{run.group, r.env_steps}].push_back(r.eval_return_mean);
    }
  }
  std::vector<CurvePoint> points;
  for (const auto& [key, values] : cells) {
    CurvePoint p;
    p.group = key.first;
    p.env_steps = key.second;
    p.runs = static_cast<int>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    p.mean_return = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - p.mean_return) * (v - p.mean_return);
      const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
      p.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
    }
    points.push_back(std::move(p));
  }
  return points;
}

void write_curves_csv(const std::vector<CurvePoint>& points,
                      const std::string& out_path) {
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("write_curves_csv: cannot open " +
                                     out_path);
  out << "group,env_steps,runs,mean_return,ci95\n";
  for (const auto& p : points) {
    out << p.group << ',' << p.env_steps << ',' << p.runs << ','
        << p.mean_return << ',' << p.ci95 << '\n';
  }
}

}  // namespace coplanner
