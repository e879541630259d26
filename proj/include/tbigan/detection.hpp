#pragma once

// Composite anomaly scoring and the rolling adaptive threshold.

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tbigan/keyvalue.hpp"
#include "tbigan/model.hpp"
#include "tbigan/pmu_data.hpp"

namespace tbigan {

struct FeatureWeights {
  std::vector<double> w;  // non-negative, mean 1 over all F
};

// Inverse per-feature variance over all frames (N x F, row-major),
// zero-variance features excluded, normalized to mean 1.
FeatureWeights fit_weights(std::span<const double> values, std::size_t features);
FeatureWeights fit_weights(const PreparedStream& training);
// Every frame of every window counts once per window it appears in.
FeatureWeights fit_weights(const std::vector<PmuWindow>& training_windows);

struct AnomalyScore {
  double total = 0.0;
  double recon_term = 0.0;
  double disc_term = 0.0;
  double latent_term = 0.0;
  std::size_t window_start = 0;
};

struct ScoreParams {
  double alpha = 0.6;
  double gamma = 1.0;
  std::size_t k = 300;
  double c = 3.0;
  bool quarantine = false;  // keep flagged scores out of the threshold buffer

  void validate() const;
  static ScoreParams from_kv(const KeyValueConfig& kv);
  static ScoreParams from_kv(const KeyValueConfig& kv, ScoreParams base);
  void to_kv(KeyValueConfig& kv) const;
};

// alpha * recon + (1 - alpha) * disc + gamma * latent, in that order.
double combine_score(double recon, double disc, double latent, double alpha, double gamma);

// Scores a batch of windows (B, T, F) against a frozen model.
std::vector<AnomalyScore> score_batch(TBiGanModel& model, const FeatureWeights& weights,
                                      const Tensor& windows, double alpha, double gamma);
AnomalyScore score_window(TBiGanModel& model, const FeatureWeights& weights,
                          const PmuWindow& window, double alpha, double gamma);
std::vector<AnomalyScore> score_windows(TBiGanModel& model, const FeatureWeights& weights,
                                        const std::vector<PmuWindow>& windows, double alpha,
                                        double gamma, std::size_t batch_size = 64);

class ThresholdState {
 public:
  ThresholdState(std::size_t k, double c, bool quarantine = false);

  std::size_t capacity() const { return k_; }
  double sensitivity() const { return c_; }
  std::size_t size() const { return buffer_.size(); }
  bool full() const { return buffer_.size() == k_; }
  const std::deque<double>& buffer() const { return buffer_; }
  // mean + c * population std of the buffer; +inf until the buffer is full.
  double theta() const;

  friend struct ThresholdDecision update_threshold(ThresholdState& state, double score);

 private:
  std::size_t k_;
  double c_;
  bool quarantine_;
  std::deque<double> buffer_;
};

struct ThresholdDecision {
  bool flag = false;
  double theta = 0.0;
};

// theta from the buffer before inserting `score`; flag = score > theta.
ThresholdDecision update_threshold(ThresholdState& state, double score);

struct TraceRow {
  AnomalyScore score;
  double theta = 0.0;
  bool flag = false;
  std::optional<bool> label;
};

std::vector<TraceRow> score_stream(TBiGanModel& model, const FeatureWeights& weights,
                                   const PreparedStream& stream, std::size_t window_len,
                                   std::size_t stride, const ScoreParams& params);

// Threads precomputed scores through a fresh threshold state.
std::vector<TraceRow> apply_threshold(const std::vector<AnomalyScore>& scores,
                                      const ScoreParams& params);

std::string format_trace_csv(const std::vector<TraceRow>& trace);
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);
std::vector<TraceRow> read_trace_csv(const std::string& path);
std::vector<TraceRow> parse_trace_csv(const std::string& text);

}  // namespace tbigan
