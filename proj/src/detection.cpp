#include "tbigan/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "tbigan/errors.hpp"

namespace tbigan {

FeatureWeights fit_weights(std::span<const double> values, std::size_t features) {
  if (features == 0) throw ConfigError("fit_weights: zero features");
  if (values.size() % features != 0) throw ShapeError("fit_weights: ragged value matrix");
  const std::size_t n = values.size() / features;
  if (n == 0) throw DataError("fit_weights: no training frames");

  std::vector<double> mean(features, 0.0), var(features, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < features; ++f) mean[f] += values[i * features + f];
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < features; ++f) {
      const double d = values[i * features + f] - mean[f];
      var[f] += d * d;
    }

  FeatureWeights out;
  out.w.assign(features, 0.0);
  double total = 0.0;
  for (std::size_t f = 0; f < features; ++f) {
    var[f] /= static_cast<double>(n);
    // Relative floor so round-off on a constant column doesn't become a huge weight.
    const double scale = std::max(1.0, mean[f] * mean[f]);
    if (var[f] > 1e-24 * scale) out.w[f] = 1.0 / var[f];
    total += out.w[f];
  }
  if (total <= 0.0) throw DataError("fit_weights: every feature has zero variance");
  const double norm = static_cast<double>(features) / total;
  for (double& w : out.w) w *= norm;
  return out;
}

FeatureWeights fit_weights(const PreparedStream& training) {
  return fit_weights(training.values, training.feature_count);
}

FeatureWeights fit_weights(const std::vector<PmuWindow>& training_windows) {
  if (training_windows.empty()) throw DataError("fit_weights: no training windows");
  const std::size_t f = training_windows.front().features;
  std::vector<double> all;
  for (const auto& w : training_windows) {
    if (w.features != f) throw ShapeError("fit_weights: windows disagree on feature count");
    all.insert(all.end(), w.data.begin(), w.data.end());
  }
  return fit_weights(all, f);
}

// ---------------------------------------------------------------------------

void ScoreParams::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("score.alpha must lie in [0, 1]");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("score.gamma must be >= 0");
  if (k < 2) throw ConfigError("score.k must be at least 2");
  if (!std::isfinite(c)) throw ConfigError("score.c must be finite");
}

ScoreParams ScoreParams::from_kv(const KeyValueConfig& kv) { return from_kv(kv, ScoreParams{}); }

ScoreParams ScoreParams::from_kv(const KeyValueConfig& kv, ScoreParams p) {
  p.alpha = kv.get_double("score.alpha", p.alpha);
  p.gamma = kv.get_double("score.gamma", p.gamma);
  const long long k = kv.get_int("score.k", static_cast<long long>(p.k));
  if (k < 2) throw ConfigError("score.k must be at least 2");
  p.k = static_cast<std::size_t>(k);
  p.c = kv.get_double("score.c", p.c);
  p.quarantine = kv.get_bool("score.quarantine", p.quarantine);
  p.validate();
  return p;
}

void ScoreParams::to_kv(KeyValueConfig& kv) const {
  kv.set("score.alpha", format_double(alpha));
  kv.set("score.gamma", format_double(gamma));
  kv.set("score.k", std::to_string(k));
  kv.set("score.c", format_double(c));
  kv.set("score.quarantine", quarantine ? "true" : "false");
}

double combine_score(double recon, double disc, double latent, double alpha, double gamma) {
  return alpha * recon + (1.0 - alpha) * disc + gamma * latent;
}

std::vector<AnomalyScore> score_batch(TBiGanModel& model, const FeatureWeights& weights,
                                      const Tensor& windows, double alpha, double gamma) {
  const auto& shape = windows.shape();
  if (shape.size() != 3) throw ShapeError("score_batch expects (B, T, F), got " + shape_str(shape));
  const std::size_t b = shape[0], t = shape[1], f = shape[2];
  if (weights.w.size() != f)
    throw ShapeError(fmt::format("score_batch: {} weights for {} features", weights.w.size(), f));

  NoGradGuard no_grad;
  model.set_training(false);
  const Tensor e = model.encode(windows);
  const Tensor x_hat = model.generate(e);
  const Tensor logits = model.discriminate_logits(windows, e);
  const Tensor e_hat = model.encode(x_hat);
  const std::size_t dz = e.shape()[1];

  const auto x = windows.data();
  const auto xr = x_hat.data();
  const auto lg = logits.data();
  const auto ed = e.data();
  const auto eh = e_hat.data();

  std::vector<AnomalyScore> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    double rec = 0.0;
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t j = 0; j < f; ++j) {
        const std::size_t k = (i * t + s) * f + j;
        const double d = x[k] - xr[k];
        rec += weights.w[j] * d * d;
      }
    rec /= static_cast<double>(t * f);
    // BCE(D, 1) = -log sigmoid(logit) = softplus(-logit)
    const double l = lg[i];
    const double disc = l > 0 ? std::log1p(std::exp(-l)) : -l + std::log1p(std::exp(l));
    double lat = 0.0;
    for (std::size_t k = 0; k < dz; ++k) {
      const double d = eh[i * dz + k] - ed[i * dz + k];
      lat += d * d;
    }
    AnomalyScore& s = out[i];
    s.recon_term = rec;
    s.disc_term = disc;
    s.latent_term = lat;
    s.total = combine_score(rec, disc, lat, alpha, gamma);
    if (!std::isfinite(s.total))
      throw NumericalError(fmt::format("non-finite anomaly score for batch row {}", i));
  }
  return out;
}

AnomalyScore score_window(TBiGanModel& model, const FeatureWeights& weights,
                          const PmuWindow& window, double alpha, double gamma) {
  std::vector<PmuWindow> one{window};
  return score_windows(model, weights, one, alpha, gamma, 1).front();
}

std::vector<AnomalyScore> score_windows(TBiGanModel& model, const FeatureWeights& weights,
                                        const std::vector<PmuWindow>& windows, double alpha,
                                        double gamma, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("score batch size must be positive");
  std::vector<AnomalyScore> out;
  out.reserve(windows.size());
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, windows.size() - start);
    const std::size_t t = windows[start].length, f = windows[start].features;
    std::vector<double> data;
    data.reserve(n * t * f);
    for (std::size_t i = start; i < start + n; ++i) {
      if (windows[i].length != t || windows[i].features != f)
        throw ShapeError("score_windows: windows disagree on shape");
      data.insert(data.end(), windows[i].data.begin(), windows[i].data.end());
    }
    std::vector<AnomalyScore> part;
    try {
      part = score_batch(model, weights, Tensor({n, t, f}, std::move(data)), alpha, gamma);
    } catch (const NumericalError&) {
      throw NumericalError(fmt::format("non-finite anomaly score in windows starting at {}",
                                       windows[start].start_index));
    }
    for (std::size_t i = 0; i < n; ++i) {
      part[i].window_start = windows[start + i].start_index;
      out.push_back(part[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ThresholdState::ThresholdState(std::size_t k, double c, bool quarantine)
    : k_(k), c_(c), quarantine_(quarantine) {
  if (k < 2) throw ConfigError("threshold buffer length k must be at least 2");
  if (!std::isfinite(c)) throw ConfigError("threshold sensitivity c must be finite");
}

double ThresholdState::theta() const {
  if (!full()) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(buffer_.size());
  const double mu = std::accumulate(buffer_.begin(), buffer_.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : buffer_) ss += (s - mu) * (s - mu);
  return mu + c_ * std::sqrt(ss / n);
}

ThresholdDecision update_threshold(ThresholdState& state, double score) {
  ThresholdDecision d;
  d.theta = state.theta();
  d.flag = score > d.theta;
  if (!(state.quarantine_ && d.flag)) {
    state.buffer_.push_back(score);
    if (state.buffer_.size() > state.k_) state.buffer_.pop_front();
  }
  return d;
}

std::vector<TraceRow> apply_threshold(const std::vector<AnomalyScore>& scores,
                                      const ScoreParams& params) {
  ThresholdState state(params.k, params.c, params.quarantine);
  std::vector<TraceRow> trace;
  trace.reserve(scores.size());
  for (const auto& s : scores) {
    const auto d = update_threshold(state, s.total);
    trace.push_back({s, d.theta, d.flag, std::nullopt});
  }
  return trace;
}

std::vector<TraceRow> score_stream(TBiGanModel& model, const FeatureWeights& weights,
                                   const PreparedStream& stream, std::size_t window_len,
                                   std::size_t stride, const ScoreParams& params) {
  params.validate();
  const auto windows = make_windows(stream, window_len, stride);
  const auto scores = score_windows(model, weights, windows, params.alpha, params.gamma);
  auto trace = apply_threshold(scores, params);
  if (!stream.labels.empty())
    for (std::size_t i = 0; i < trace.size(); ++i) trace[i].label = windows[i].label;
  return trace;
}

// ---------------------------------------------------------------------------

std::string format_trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out << "window_start,recon_term,disc_term,latent_term,total,theta,flag,label\n";
  for (const auto& r : trace) {
    out << r.score.window_start << ',' << format_double(r.score.recon_term) << ','
        << format_double(r.score.disc_term) << ',' << format_double(r.score.latent_term) << ','
        << format_double(r.score.total) << ','
        << (std::isinf(r.theta) ? std::string("inf") : format_double(r.theta)) << ','
        << (r.flag ? 1 : 0) << ',';
    if (r.label) out << (*r.label ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write trace file " + path);
  f << format_trace_csv(trace);
  if (!f) throw DataError("failed writing trace file " + path);
}

std::vector<TraceRow> parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("window_start,", 0) != 0)
    throw DataError("trace CSV: missing header");
  std::vector<TraceRow> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw DataError(fmt::format("trace CSV line {}: expected 8 fields", lineno));
    try {
      TraceRow r;
      r.score.window_start = static_cast<std::size_t>(std::stoull(cells[0]));
      r.score.recon_term = parse_double(cells[1], "trace field");
      r.score.disc_term = parse_double(cells[2], "trace field");
      r.score.latent_term = parse_double(cells[3], "trace field");
      r.score.total = parse_double(cells[4], "trace field");
      r.theta = cells[5] == "inf" ? std::numeric_limits<double>::infinity() : parse_double(cells[5], "trace field");
      r.flag = cells[6] == "1";
      if (!cells[7].empty()) r.label = cells[7] == "1";
      out.push_back(r);
    } catch (const std::exception& e) {
      throw DataError(fmt::format("trace CSV line {}: {}", lineno, e.what()));
    }
  }
  return out;
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open trace file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_trace_csv(ss.str());
}

}  // namespace tbigan
