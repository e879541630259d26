#pragma once

// PMU stream ingestion, selective-log + z-score preprocessing, sliding windows
// and a synthetic PMU stream generator with labelled anomaly injection.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tbigan {

// Number of measured variables per PMU site: three-phase voltage and current
// magnitudes and angles, frequency and ROCOF.
inline constexpr std::size_t kVariablesPerPmu = 14;

struct PmuFrame {
  double timestamp = 0.0;
  std::vector<double> features;
  std::optional<bool> label;
};

// A stream of frames stored column-contiguous per row (N x F, row-major).
// Missing cells are NaN.
struct RawStream {
  std::vector<std::string> feature_names;
  std::vector<double> timestamps;
  std::vector<double> values;
  std::vector<std::uint8_t> labels;  // empty when the stream is unlabeled

  std::size_t frames() const { return timestamps.size(); }
  std::size_t features() const { return feature_names.size(); }
  bool has_labels() const { return !labels.empty(); }
  double at(std::size_t row, std::size_t col) const { return values[row * features() + col]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * features(), features()};
  }
  PmuFrame frame(std::size_t r) const;
  void append(const PmuFrame& frame);
  // Frames [begin, end) as a new stream.
  RawStream slice(std::size_t begin, std::size_t end) const;
  // Throws DataError on non-increasing timestamps or ragged rows.
  void validate() const;
};

RawStream read_stream_csv(const std::string& path);
RawStream parse_stream_csv(const std::string& text, const std::string& origin = "<memory>");
void write_stream_csv(const std::string& path, const RawStream& stream);
std::string format_stream_csv(const RawStream& stream);

struct FeatureStats {
  std::size_t index = 0;
  double mean = 0.0;       // after optional log1p, over imputed training data
  double variance = 0.0;   // population variance, same space as mean
  bool apply_log = false;
  double impute_value = 0.0;  // raw-space mean of present training values
  double raw_min = 0.0;
  double raw_max = 0.0;
  double missing_fraction = 0.0;
  bool zero_variance = false;

  double scale() const;
};

struct PreprocessStats {
  std::vector<FeatureStats> features;
  std::string split_id;
  std::string fitted_at;

  nlohmann::json to_json(bool include_timestamp = true) const;
  static PreprocessStats from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static PreprocessStats load(const std::string& path);
};

// Selective-log rule: strictly positive, large-magnitude channels only.
bool selective_log_rule(double raw_min, double raw_max);

// Fails with DataError when a feature is missing in more than half of the
// training rows or when the stream is empty.
PreprocessStats fit_preprocess(const RawStream& training, const std::string& split_id = "train");

RawStream impute_missing(const RawStream& stream, const PreprocessStats& stats);

std::vector<double> apply_preprocess(const PmuFrame& frame, const PreprocessStats& stats);

// Preprocessed N x F matrix with timestamps/labels carried along.
struct PreparedStream {
  std::size_t feature_count = 0;
  std::vector<double> timestamps;
  std::vector<double> values;
  std::vector<std::uint8_t> labels;

  std::size_t frames() const { return timestamps.size(); }
};

PreparedStream preprocess_stream(const RawStream& stream, const PreprocessStats& stats);

struct PmuWindow {
  std::size_t start_index = 0;
  std::size_t length = 0;
  std::size_t features = 0;
  std::vector<double> data;  // length x features, row-major
  bool label = false;
};

std::size_t window_count(std::size_t frames, std::size_t length, std::size_t stride);
std::vector<PmuWindow> make_windows(const PreparedStream& stream, std::size_t length,
                                    std::size_t stride);

// ---------------------------------------------------------------------------
// Synthetic streams

enum class AnomalyKind { kStep, kFrequencyExcursion, kDropout, kOscillation };

std::string to_string(AnomalyKind kind);
AnomalyKind parse_anomaly_kind(const std::string& text);

struct AnomalySegment {
  double start_s = 0.0;
  double end_s = 0.0;
  AnomalyKind kind = AnomalyKind::kStep;
  int pmu = -1;  // affected site; -1 picks one from the seed
};

struct SynthConfig {
  std::size_t channels = 8;  // PMU sites, each with kVariablesPerPmu variables
  double rate_hz = 30.0;
  double duration_s = 60.0;
  double snr_voltage_db = 47.0;
  double snr_current_db = 47.0;
  double snr_frequency_db = 75.0;
  // Anomaly strength multiplier (1 = nominal magnitudes).
  double severity = 1.0;
  // When set, cmd_synth splits the stream into train/test at this time.
  std::optional<double> split_s;
  std::vector<AnomalySegment> anomalies;

  std::size_t frame_count() const;
  std::size_t feature_count() const { return channels * kVariablesPerPmu; }
  // Throws ConfigError (overlapping or out-of-range segments, bad rates).
  void validate() const;

  static SynthConfig parse(const std::string& text);
  static SynthConfig load(const std::string& path);
  std::string to_text() const;
};

struct SynthResult {
  RawStream stream;
  std::vector<double> clean;  // noise-free signal, same layout as stream.values
  std::vector<AnomalySegment> anomalies;  // with resolved pmu indices
};

SynthResult synth_stream(const SynthConfig& config, std::uint64_t seed);

std::vector<std::string> pmu_feature_names(std::size_t channels);

}  // namespace tbigan
