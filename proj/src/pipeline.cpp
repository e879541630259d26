#include "tbigan/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "tbigan/errors.hpp"

namespace tbigan {

void RunConfig::set_seed(std::uint64_t seed) {
  train.seed = seed;
  model.init_seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  score.validate();
  if (score_stride == 0) throw ConfigError("score.stride must be positive");
  if (!(eval_val_fraction > 0.0 && eval_val_fraction < 1.0))
    throw ConfigError("eval.val_fraction must lie strictly between 0 and 1");
}

std::vector<std::string> RunConfig::unknown_keys(const KeyValueConfig& kv) {
  std::set<std::string> known = {"seed", "data.train", "data.validation", "data.test"};
  const KeyValueConfig defaults = RunConfig{}.to_kv();
  for (const auto& [key, value] : defaults.entries()) known.insert(key);
  std::vector<std::string> out;
  for (const auto& [key, value] : kv.entries()) {
    if (known.count(key) == 0 && key.rfind("search.", 0) != 0 &&
        std::find(out.begin(), out.end(), key) == out.end())
      out.push_back(key);
  }
  return out;
}

RunConfig RunConfig::from_kv(const KeyValueConfig& kv) {
  // A misspelt key would otherwise silently run with the default.
  if (const auto unknown = unknown_keys(kv); !unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown configuration keys: " + list);
  }
  RunConfig c;
  c.model = ModelConfig::from_kv(kv);
  c.train = TrainConfig::from_kv(kv);
  c.score = ScoreParams::from_kv(kv);
  const long long stride = kv.get_int("score.stride", 1);
  if (stride <= 0) throw ConfigError("score.stride must be positive");
  c.score_stride = static_cast<std::size_t>(stride);
  c.eval_val_fraction = kv.get_double("eval.val_fraction", c.eval_val_fraction);
  c.train_csv = kv.get_string("data.train", "");
  c.validation_csv = kv.get_string("data.validation", "");
  c.test_csv = kv.get_string("data.test", "");
  if (kv.contains("seed")) c.set_seed(static_cast<std::uint64_t>(kv.get_int("seed", 0)));
  c.validate();
  return c;
}

KeyValueConfig RunConfig::to_kv() const {
  KeyValueConfig kv;
  model.to_kv(kv);
  train.to_kv(kv);
  score.to_kv(kv);
  kv.set("score.stride", std::to_string(score_stride));
  kv.set("eval.val_fraction", format_double(eval_val_fraction));
  if (!train_csv.empty()) kv.set("data.train", train_csv);
  if (!validation_csv.empty()) kv.set("data.validation", validation_csv);
  if (!test_csv.empty()) kv.set("data.test", test_csv);
  return kv;
}

std::string RunConfig::to_text() const { return to_kv().to_string(); }

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------

ValidationScore validation_score(TBiGanModel& model, const FeatureWeights& weights,
                                 const PreparedStream& stream, const RunConfig& config) {
  const auto windows = make_windows(stream, config.model.window_len, config.score_stride);
  const auto scores =
      score_windows(model, weights, windows, config.score.alpha, config.score.gamma);
  ScoredLabels sl;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sl.scores.push_back(scores[i].total);
    sl.labels.push_back(windows[i].label ? 1 : 0);
  }
  return {pr_curve(sl).ap, roc_auc(sl)};
}

TrainedRun train_run(const RawStream& train, const std::optional<RawStream>& validation,
                     const RunConfig& config, const TrainHooks& extra_hooks) {
  config.validate();
  ModelConfig mc = config.model;
  if (mc.feature_dim != train.features()) {
    spdlog::info("model.feature_dim {} replaced by the stream's {} features", mc.feature_dim,
                 train.features());
    mc.feature_dim = train.features();
  }
  PreprocessStats stats = fit_preprocess(train, "train");
  const PreparedStream prepared = preprocess_stream(train, stats);
  const auto windows = make_windows(prepared, mc.window_len, config.train.stride);
  TrainedRun run{TBiGanModel(mc), stats, fit_weights(prepared), {}};

  TrainHooks hooks = extra_hooks;
  std::optional<PreparedStream> val;
  if (validation) {
    if (validation->features() != train.features())
      throw DataError(fmt::format("validation stream has {} features, training stream has {}",
                                  validation->features(), train.features()));
    val = preprocess_stream(*validation, stats);
    const auto windows_val = make_windows(*val, mc.window_len, config.score_stride);
    const bool both = std::any_of(windows_val.begin(), windows_val.end(),
                                  [](const PmuWindow& w) { return w.label; }) &&
                      std::any_of(windows_val.begin(), windows_val.end(),
                                  [](const PmuWindow& w) { return !w.label; });
    if (both && !hooks.validate) {
      hooks.validate = [&](TBiGanModel& m) {
        return validation_score(m, run.weights, *val, config).ap;
      };
    } else if (!both) {
      spdlog::warn("validation stream lacks one of the classes; early stopping disabled");
    }
  }
  run.result = tbigan::train(run.model, windows, config.train, hooks);
  return run;
}

CheckpointExtras run_extras(const TrainedRun& run) {
  CheckpointExtras e;
  e.preprocess = run.stats.to_json(false);
  e.feature_weights = run.weights.w;
  return e;
}

std::vector<TraceRow> score_run(TBiGanModel& model, const PreprocessStats& stats,
                                const FeatureWeights& weights, const RawStream& stream,
                                const RunConfig& config) {
  const std::size_t expected = model.config().feature_dim;
  if (stream.features() != expected || stats.features.size() != expected)
    throw DataError(fmt::format("stream has {} features but the checkpoint expects {}",
                                stream.features(), expected));
  const PreparedStream prepared = preprocess_stream(stream, stats);
  return score_stream(model, weights, prepared, model.config().window_len, config.score_stride,
                      config.score);
}

// ---------------------------------------------------------------------------

namespace {

LevelEvaluation evaluate_level(const ScoredLabels& val, const ScoredLabels& test,
                               const std::string& level) {
  LevelEvaluation out;
  out.report = evaluate_split(val, test, level);
  out.validation_threshold = youden_threshold(val).threshold;
  out.roc = roc_curve(test);
  out.pr = pr_curve(test);
  return out;
}

}  // namespace

TraceEvaluation evaluate_trace(const std::vector<TraceRow>& trace, double val_fraction,
                               std::size_t window_len,
                               const std::vector<std::uint8_t>& frame_labels) {
  if (trace.empty()) throw DataError("empty score trace");
  for (const auto& r : trace)
    if (!r.label)
      throw DataError("the trace has no labels; score a labeled stream before evaluating");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("validation fraction must lie strictly between 0 and 1");

  const std::size_t n_val =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(val_fraction * trace.size())),
                              1, trace.size() - 1);
  TraceEvaluation ev;
  ev.validation_rows = n_val;
  ev.test_rows = trace.size() - n_val;

  ScoredLabels wv, wt;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    auto& dst = i < n_val ? wv : wt;
    dst.scores.push_back(trace[i].score.total);
    dst.labels.push_back(*trace[i].label ? 1 : 0);
    if (i >= n_val) {
      const bool pos = *trace[i].label, flag = trace[i].flag;
      if (flag && pos) ++ev.online.tp;
      else if (flag) ++ev.online.fp;
      else if (pos) ++ev.online.fn;
      else ++ev.online.tn;
    }
  }
  ev.window = evaluate_level(wv, wt, "window");

  if (!frame_labels.empty()) {
    // A frame takes the latest window covering it, so frames before the first
    // test window only ever see validation windows.
    const std::size_t boundary = trace[n_val].score.window_start;
    std::vector<std::size_t> starts, index;
    std::vector<double> scores;
    for (const auto& r : trace) {
      starts.push_back(r.score.window_start);
      scores.push_back(r.score.total);
    }
    const ScoredLabels all = frame_level(starts, scores, window_len, frame_labels, &index);
    ScoredLabels fv, ft;
    for (std::size_t i = 0; i < index.size(); ++i) {
      auto& dst = index[i] < boundary ? fv : ft;
      dst.scores.push_back(all.scores[i]);
      dst.labels.push_back(all.labels[i]);
    }
    if (fv.positives() > 0 && fv.negatives() > 0 && ft.positives() > 0 && ft.negatives() > 0) {
      ev.frame = evaluate_level(fv, ft, "frame");
    } else {
      spdlog::warn("frame-level report skipped: a slice lacks one of the classes");
    }
  }
  return ev;
}

namespace {

nlohmann::json optional_json(std::optional<double> v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json TraceEvaluation::to_json() const {
  auto level = [](const LevelEvaluation& l) {
    nlohmann::json j = l.report.to_json();
    j["validation_threshold"] = l.validation_threshold;
    return j;
  };
  nlohmann::json j;
  j["validation_rows"] = validation_rows;
  j["test_rows"] = test_rows;
  j["window"] = level(window);
  j["frame"] = frame ? level(*frame) : nlohmann::json(nullptr);
  j["online"] = {{"tp", online.tp},
                 {"fp", online.fp},
                 {"tn", online.tn},
                 {"fn", online.fn},
                 {"precision", optional_json(online.precision())},
                 {"recall", optional_json(online.recall())},
                 {"fpr", optional_json(online.fpr())}};
  return j;
}

}  // namespace tbigan
