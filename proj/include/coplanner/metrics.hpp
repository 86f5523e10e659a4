#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coplanner/buffers.hpp"
#include "coplanner/ensemble.hpp"
#include "coplanner/types.hpp"

namespace coplanner {

// One persisted telemetry row per evaluation.
struct MetricRecord {
  std::int64_t env_steps = 0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double model_holdout_mse = 0.0;
  double rollout_uncertainty = 0.0;
  double wall_seconds = 0.0;
  std::string mode;
  std::int64_t seed = 0;
};

nlohmann::ordered_json metric_to_json(const MetricRecord& r);
MetricRecord metric_from_json(const nlohmann::json& j);

// Append-only JSON-lines writer; one independently parseable line per record.
class MetricSink {
 public:
  explicit MetricSink(const std::string& path);
  void write(const MetricRecord& r);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

std::vector<MetricRecord> read_metrics(const std::string& path);

// CSV export of a metrics file, same columns as the JSONL keys.
void metrics_to_csv(const std::vector<MetricRecord>& records,
                    const std::string& out_path);

// MSE between the elite-mean denormalized next-state prediction and the true
// next state, averaged over samples and state dimensions.
double model_prediction_error(const EnsembleModel& model,
                              const std::vector<Transition>& holdout);

// Mean disagreement over every (s, a) stored in the model buffer.
double rollout_uncertainty_metric(const EnsembleModel& model,
                                  const ModelBuffer& buffer);

struct RunManifest {
  std::string config_hash;
  std::int64_t seed = 0;
  std::string artifact_version;
  std::string env;
  std::string mode;
  std::string group;  // aggregation key used by plot-data
  std::string metrics_path;
  std::string status;  // running | complete | failed
  double wall_seconds = 0.0;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

// FNV-1a over the canonical (sorted-key) dump, so the hash is stable under
// key reordering of the config document.
std::string config_hash_hex(const nlohmann::json& config);

// One aggregated learning-curve point: mean eval return across runs in a
// group at a checkpoint, with a 95% normal-approximation confidence
// half-width (1.96 * sd / sqrt(n), sample sd).
struct CurvePoint {
  std::string group;
  std::int64_t env_steps = 0;
  int runs = 0;
  double mean_return = 0.0;
  double ci95 = 0.0;
};

struct RunSeries {
  std::string group;
  std::vector<MetricRecord> records;
};

std::vector<CurvePoint> aggregate_curves(const std::vector<RunSeries>& runs);

void write_curves_csv(const std::vector<CurvePoint>& points,
                      const std::string& out_path);

}  // namespace coplanner
