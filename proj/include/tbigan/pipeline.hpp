#pragma once

// End-to-end plumbing shared by the CLI and the acceptance harness:
// resolved run configuration, train/score/evaluate steps on raw streams.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tbigan/detection.hpp"
#include "tbigan/keyvalue.hpp"
#include "tbigan/metrics.hpp"
#include "tbigan/model.hpp"
#include "tbigan/pmu_data.hpp"
#include "tbigan/training.hpp"

namespace tbigan {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  ScoreParams score;
  std::size_t score_stride = 1;
  // Leading fraction of a scored trace used to pick the Youden threshold.
  double eval_val_fraction = 0.5;
  std::string train_csv;
  std::string validation_csv;
  std::string test_csv;

  // Overrides both the training and the initialization seed.
  void set_seed(std::uint64_t seed);
  void validate() const;
  // Rejects keys outside the model/train/score/eval/data/search families.
  static RunConfig from_kv(const KeyValueConfig& kv);
  static std::vector<std::string> unknown_keys(const KeyValueConfig& kv);
  KeyValueConfig to_kv() const;
  std::string to_text() const;
  // FNV-1a over to_text(); names run directories.
  std::uint64_t hash() const;
};

struct TrainedRun {
  TBiGanModel model;
  PreprocessStats stats;
  FeatureWeights weights;
  TrainResult result;
};

// Window-level average precision of the composite score on a labeled stream.
struct ValidationScore {
  double ap = 0.0;
  double auc = 0.0;
};
ValidationScore validation_score(TBiGanModel& model, const FeatureWeights& weights,
                                 const PreparedStream& stream, const RunConfig& config);

// Fits preprocessing on `train`, trains, and (when `validation` carries both
// classes) early-stops on validation AP.
TrainedRun train_run(const RawStream& train, const std::optional<RawStream>& validation,
                     const RunConfig& config, const TrainHooks& extra_hooks = {});

CheckpointExtras run_extras(const TrainedRun& run);

// Preprocesses `stream` with the checkpoint's statistics and scores it.
// Throws DataError when the feature counts disagree.
std::vector<TraceRow> score_run(TBiGanModel& model, const PreprocessStats& stats,
                                const FeatureWeights& weights, const RawStream& stream,
                                const RunConfig& config);

struct LevelEvaluation {
  EvaluationReport report;
  double validation_threshold = 0.0;
  RocCurve roc;
  PrCurve pr;
};

struct TraceEvaluation {
  LevelEvaluation window;
  std::optional<LevelEvaluation> frame;
  // Online (rolling-threshold) flags on the test slice.
  ConfusionMatrix online;
  std::size_t validation_rows = 0;
  std::size_t test_rows = 0;

  nlohmann::json to_json() const;
};

// Splits the trace in temporal order; the first `val_fraction` picks the
// threshold, the rest is reported. Frame labels (optional) enable the
// frame-level report. Throws DataError when labels are missing.
TraceEvaluation evaluate_trace(const std::vector<TraceRow>& trace, double val_fraction,
                               std::size_t window_len,
                               const std::vector<std::uint8_t>& frame_labels = {});

}  // namespace tbigan
