#pragma once

// Ranking metrics, operating-point selection, and the PCA baseline.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tbigan {

struct ScoredLabels {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;  // 0 / 1

  std::size_t positives() const;
  std::size_t negatives() const;
  // Throws ShapeError on length mismatch, DataError on empty input.
  void validate() const;
};

struct RocCurve {
  // Points from (0, 0) to (1, 1); thresholds[i] is the score at which point
  // i + 1 is reached (flag = score >= thresholds[i]).
  std::vector<double> fpr;
  std::vector<double> tpr;
  std::vector<double> thresholds;
  double auc = 0.0;
};

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  std::vector<double> thresholds;
  double ap = 0.0;
};

struct YoudenResult {
  double threshold = 0.0;
  double j = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  std::optional<double> precision() const;
  std::optional<double> recall() const;  // = TPR
  std::optional<double> fpr() const;
  std::optional<double> f1() const;
};

// Both need a positive and a negative (UndefinedMetricError otherwise).
RocCurve roc_curve(const ScoredLabels& data);
double roc_auc(const ScoredLabels& data);
// Needs at least one positive.
PrCurve pr_curve(const ScoredLabels& data);
YoudenResult youden_threshold(const ScoredLabels& data);
// flag = score > threshold
ConfusionMatrix confusion_at(const ScoredLabels& data, double threshold);

// Flattened rows (n x dim, row-major). n_components == 0 picks the smallest
// count reaching `variance_target` of the training variance.
struct PcaModel {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // orthonormal, each length dim
  std::vector<double> eigenvalues;
};

PcaModel fit_pca(const std::vector<double>& rows, std::size_t dim, std::size_t n_components,
                 double variance_target = 0.95);
std::vector<double> pca_scores(const PcaModel& pca, const std::vector<double>& rows);
std::vector<double> pca_baseline(const std::vector<double>& train_rows,
                                 const std::vector<double>& test_rows, std::size_t dim,
                                 std::size_t n_components, double variance_target = 0.95);

// Frame f gets the score of the latest window start s with s <= f < s + T.
// Frames covered by no window are dropped from the result; `frame_index`
// (optional) receives the frame number of each kept entry.
ScoredLabels frame_level(const std::vector<std::size_t>& window_starts,
                         const std::vector<double>& window_scores, std::size_t window_len,
                         const std::vector<std::uint8_t>& frame_labels,
                         std::vector<std::size_t>* frame_index = nullptr);

struct EvaluationReport {
  std::string level;  // "frame" or "window"
  double auc = 0.0;
  double ap = 0.0;
  double threshold = 0.0;
  ConfusionMatrix confusion;

  nlohmann::json to_json() const;
};

// Threshold chosen by Youden's J on `validation`, applied unchanged to `test`.
EvaluationReport evaluate_split(const ScoredLabels& validation, const ScoredLabels& test,
                                const std::string& level);

std::string format_roc_csv(const RocCurve& curve);
std::string format_pr_csv(const PrCurve& curve);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace tbigan
