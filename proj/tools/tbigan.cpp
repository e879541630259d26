// tbigan: synthesize PMU streams, train, score, evaluate, search.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "tbigan/errors.hpp"
#include "tbigan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tbigan;

namespace {

enum Exit { kOk = 0, kConfig = 1, kData = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string run_name;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Configuration file (key = value)");
  cmd->add_option("--seed", c.seed, "Seed (overrides the config)");
  cmd->add_option("--out", c.out, "Base output directory")->capture_default_str();
  cmd->add_option("--run-name", c.run_name,
                  "Exact run directory name (default run-<config hash>-<UTC timestamp>)");
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

fs::path make_run_dir(const Common& c, const std::string& command, const std::string& config_text) {
  std::string name = c.run_name;
  if (name.empty())
    name = fmt::format("run-{:016x}-{}", fnv1a(command + "\n" + config_text), utc_stamp());
  fs::path dir = fs::path(c.out) / name;
  if (c.run_name.empty()) {
    for (int k = 1; fs::exists(dir); ++k) dir = fs::path(c.out) / fmt::format("{}-{}", name, k);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  std::printf("run directory: %s\n", dir.string().c_str());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  write_text_file(path.string(), text);
}

KeyValueConfig load_kv(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

RunConfig load_run_config(const Common& c) {
  RunConfig rc = RunConfig::from_kv(load_kv(c.config));
  if (c.seed) rc.set_seed(*c.seed);
  return rc;
}

// Without --config, fall back to the config a previous stage left beside its
// output (run_config.txt next to a checkpoint, score_config.txt next to a trace).
RunConfig load_run_config_near(const Common& c, const std::string& artifact,
                               const char* sidecar) {
  if (!c.config.empty() || artifact.empty()) return load_run_config(c);
  const fs::path side = fs::path(artifact).parent_path() / sidecar;
  if (!fs::exists(side)) return load_run_config(c);
  spdlog::info("using {}", side.string());
  Common near = c;
  near.config = side.string();
  return load_run_config(near);
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c) {
  if (c.config.empty()) throw ConfigError("synth needs --config <synth config>");
  SynthConfig sc = SynthConfig::load(c.config);
  const std::uint64_t seed = c.seed.value_or(0);
  const std::string resolved = sc.to_text() + fmt::format("seed = {}\n", seed);
  const fs::path dir = make_run_dir(c, "synth", resolved);
  const SynthResult r = synth_stream(sc, seed);
  write_file(dir / "synth_config.txt", resolved);

  if (sc.split_s) {
    const std::size_t split = std::min(
        r.stream.frames(), static_cast<std::size_t>(std::llround(*sc.split_s * sc.rate_hz)));
    write_stream_csv((dir / "train.csv").string(), r.stream.slice(0, split));
    write_stream_csv((dir / "test.csv").string(), r.stream.slice(split, r.stream.frames()));
    std::printf("frames: %zu train, %zu test, %zu features\n", split, r.stream.frames() - split,
                r.stream.features());
  } else {
    write_stream_csv((dir / "stream.csv").string(), r.stream);
    std::printf("frames: %zu, %zu features\n", r.stream.frames(), r.stream.features());
  }
  std::ostringstream seg;
  seg << "start_s,end_s,kind,pmu\n";
  std::printf("anomaly segments: %zu\n", r.anomalies.size());
  for (const auto& a : r.anomalies) {
    std::printf("  %s..%s s  %s  pmu %d\n", format_double(a.start_s).c_str(),
                format_double(a.end_s).c_str(), to_string(a.kind).c_str(), a.pmu);
    seg << format_double(a.start_s) << ',' << format_double(a.end_s) << ',' << to_string(a.kind)
        << ',' << a.pmu << '\n';
  }
  write_file(dir / "anomalies.csv", seg.str());
  return kOk;
}

int cmd_train(const Common& c, std::string train_csv, std::string validation_csv) {
  RunConfig rc = load_run_config(c);
  if (!train_csv.empty()) rc.train_csv = train_csv;
  if (!validation_csv.empty()) rc.validation_csv = validation_csv;
  if (rc.train_csv.empty()) throw ConfigError("train needs --train <csv> or data.train");

  const RawStream stream = read_stream_csv(rc.train_csv);
  std::optional<RawStream> val;
  if (!rc.validation_csv.empty()) val = read_stream_csv(rc.validation_csv);
  rc.model.feature_dim = stream.features();
  rc.validate();

  const fs::path dir = make_run_dir(c, "train", rc.to_text());
  write_file(dir / "run_config.txt", rc.to_text());

  TrainHooks hooks;
  hooks.on_epoch = [](const LossRecord& r) {
    std::printf("epoch %zu  L_D %.4f  L_adv %.4f  L_rec %.4f  L_z %.4f%s\n", r.epoch, r.l_d,
                r.l_adv, r.l_rec, r.l_latent,
                r.val_ap ? fmt::format("  val AP {:.4f}", *r.val_ap).c_str() : "");
    std::fflush(stdout);
  };
  TrainedRun run = train_run(stream, val, rc, hooks);
  write_loss_csv((dir / "loss_history.csv").string(), run.result.history);
  run.stats.save((dir / "preprocess.json").string());
  write_file(dir / "feature_weights.json", nlohmann::json(run.weights.w).dump() + "\n");

  if (run.result.halted) {
    nlohmann::json diag = {{"diagnostic", run.result.diagnostic},
                           {"epochs_run", run.result.epochs_run},
                           {"history", format_loss_csv(run.result.history)}};
    write_file(dir / "diagnostic.json", diag.dump(2) + "\n");
    std::fprintf(stderr, "error: training halted: %s\n", run.result.diagnostic.c_str());
    return kNumerical;
  }
  save_checkpoint((dir / "checkpoint.json").string(), run.model, run_extras(run));
  std::printf("checkpoint hash: %016llx\n", static_cast<unsigned long long>(run.model.hash()));
  if (run.result.best_epoch) std::printf("best epoch: %zu\n", *run.result.best_epoch);
  return kOk;
}

int cmd_score(const Common& c, const std::string& checkpoint, std::string data_csv) {
  RunConfig rc = load_run_config_near(c, checkpoint, "run_config.txt");
  if (!data_csv.empty()) rc.test_csv = data_csv;
  if (rc.test_csv.empty()) throw ConfigError("score needs --data <csv> or data.test");
  if (checkpoint.empty()) throw ConfigError("score needs --checkpoint <path>");

  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  if (!ck.extras.preprocess) throw DataError("checkpoint carries no preprocessing statistics");
  const PreprocessStats stats = PreprocessStats::from_json(*ck.extras.preprocess);
  const FeatureWeights weights{ck.extras.feature_weights};
  const RawStream stream = read_stream_csv(rc.test_csv);
  rc.model = ck.model.config();

  const std::string resolved = "# checkpoint: " + checkpoint + "\n" + rc.to_text();
  const fs::path dir = make_run_dir(c, "score", resolved);
  write_file(dir / "score_config.txt", resolved);
  const auto trace = score_run(ck.model, stats, weights, stream, rc);
  write_trace_csv((dir / "trace.csv").string(), trace);

  std::size_t flags = 0, finite = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
  for (const auto& r : trace) {
    flags += r.flag ? 1 : 0;
    if (std::isfinite(r.theta)) {
      ++finite;
      lo = std::min(lo, r.theta);
      hi = std::max(hi, r.theta);
      sum += r.theta;
    }
  }
  std::printf("windows: %zu  flagged: %zu (%.2f%%)\n", trace.size(), flags,
              trace.empty() ? 0.0 : 100.0 * static_cast<double>(flags) / trace.size());
  if (finite > 0)
    std::printf("theta: min %.6g  mean %.6g  max %.6g  (%zu warm-up windows)\n", lo,
                sum / static_cast<double>(finite), hi, trace.size() - finite);
  else
    std::printf("theta: still warming up (k = %zu)\n", rc.score.k);
  return kOk;
}

void print_confusion(const char* label, const ConfusionMatrix& m) {
  auto f = [](std::optional<double> v) { return v ? fmt::format("{:.3f}", *v) : "n/a"; };
  std::printf("%s: tp %llu fp %llu tn %llu fn %llu  precision %s recall/TPR %s FPR %s F1 %s\n",
              label, static_cast<unsigned long long>(m.tp), static_cast<unsigned long long>(m.fp),
              static_cast<unsigned long long>(m.tn), static_cast<unsigned long long>(m.fn),
              f(m.precision()).c_str(), f(m.recall()).c_str(), f(m.fpr()).c_str(),
              f(m.f1()).c_str());
}

ScoredLabels read_scored_labels(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("score,label", 0) != 0)
    throw DataError(path + ": expected a 'score,label' header");
  ScoredLabels sl;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma + 1 >= line.size())
      throw DataError(fmt::format("{} line {}: missing label", path, lineno));
    sl.scores.push_back(parse_double(line.substr(0, comma), "score"));
    const std::string lab = line.substr(comma + 1);
    if (lab != "0" && lab != "1") throw DataError(fmt::format("{} line {}: label must be 0 or 1", path, lineno));
    sl.labels.push_back(lab == "1" ? 1 : 0);
  }
  return sl;
}

int cmd_evaluate(const Common& c, const std::string& trace_csv, const std::string& scores_csv,
                 const std::string& data_csv, std::optional<double> val_fraction,
                 const std::string& counts) {
  const RunConfig rc = load_run_config_near(c, trace_csv, "score_config.txt");
  const double vf = val_fraction.value_or(rc.eval_val_fraction);

  if (!counts.empty()) {
    std::vector<std::uint64_t> v;
    std::stringstream ss(counts);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(std::stoull(item));
    if (v.size() != 4) throw ConfigError("--counts expects tn,fp,fn,tp");
    ConfusionMatrix m{v[3], v[1], v[0], v[2]};
    const fs::path dir = make_run_dir(c, "evaluate", "counts = " + counts + "\n");
    nlohmann::json j = {{"confusion", {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}}},
                        {"tpr", m.recall() ? nlohmann::json(*m.recall()) : nlohmann::json()},
                        {"fpr", m.fpr() ? nlohmann::json(*m.fpr()) : nlohmann::json()},
                        {"precision", m.precision() ? nlohmann::json(*m.precision()) : nlohmann::json()},
                        {"f1", m.f1() ? nlohmann::json(*m.f1()) : nlohmann::json()}};
    write_file(dir / "report.json", j.dump(2) + "\n");
    print_confusion("counts", m);
    return kOk;
  }

  if (!scores_csv.empty()) {
    const ScoredLabels sl = read_scored_labels(scores_csv);
    if (sl.positives() == 0 || sl.negatives() == 0)
      throw DataError("scored labels need both classes; evaluate labeled data");
    const std::size_t n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::floor(vf * sl.scores.size())), 1, sl.scores.size() - 1);
    ScoredLabels val{{sl.scores.begin(), sl.scores.begin() + n_val},
                     {sl.labels.begin(), sl.labels.begin() + n_val}};
    ScoredLabels test{{sl.scores.begin() + n_val, sl.scores.end()},
                      {sl.labels.begin() + n_val, sl.labels.end()}};
    const fs::path dir = make_run_dir(c, "evaluate", "scores = " + scores_csv + "\n" + rc.to_text());
    const EvaluationReport rep = evaluate_split(val, test, "window");
    write_file(dir / "report.json", rep.to_json().dump(2) + "\n");
    write_file(dir / "roc.csv", format_roc_csv(roc_curve(test)));
    write_file(dir / "pr.csv", format_pr_csv(pr_curve(test)));
    std::printf("AUC %.4f  AP %.4f  threshold %.6g\n", rep.auc, rep.ap, rep.threshold);
    print_confusion("test", rep.confusion);
    return kOk;
  }

  if (trace_csv.empty()) throw ConfigError("evaluate needs --trace, --scores or --counts");
  const auto trace = read_trace_csv(trace_csv);
  std::vector<std::uint8_t> frame_labels;
  if (!data_csv.empty()) {
    const RawStream stream = read_stream_csv(data_csv);
    if (!stream.has_labels()) throw DataError(data_csv + " has no label column");
    frame_labels = stream.labels;
  }
  const std::string resolved = "trace = " + trace_csv + "\n" + rc.to_text();
  const fs::path dir = make_run_dir(c, "evaluate", resolved);
  const TraceEvaluation ev = evaluate_trace(trace, vf, rc.model.window_len, frame_labels);
  write_file(dir / "report.json", ev.to_json().dump(2) + "\n");
  write_file(dir / "roc_window.csv", format_roc_csv(ev.window.roc));
  write_file(dir / "pr_window.csv", format_pr_csv(ev.window.pr));
  std::printf("window: AUC %.4f  AP %.4f  threshold %.6g\n", ev.window.report.auc,
              ev.window.report.ap, ev.window.report.threshold);
  print_confusion("window", ev.window.report.confusion);
  if (ev.frame) {
    write_file(dir / "roc_frame.csv", format_roc_csv(ev.frame->roc));
    write_file(dir / "pr_frame.csv", format_pr_csv(ev.frame->pr));
    std::printf("frame: AUC %.4f  AP %.4f  threshold %.6g\n", ev.frame->report.auc,
                ev.frame->report.ap, ev.frame->report.threshold);
    print_confusion("frame", ev.frame->report.confusion);
  }
  print_confusion("online", ev.online);
  return kOk;
}

int cmd_search(const Common& c, std::string train_csv, std::string validation_csv) {
  const KeyValueConfig kv = load_kv(c.config);
  RunConfig base = RunConfig::from_kv(kv);
  if (c.seed) base.set_seed(*c.seed);
  if (!train_csv.empty()) base.train_csv = train_csv;
  if (!validation_csv.empty()) base.validation_csv = validation_csv;
  if (base.train_csv.empty() || base.validation_csv.empty())
    throw ConfigError("search needs training and labeled validation streams");
  const SearchSpace space = SearchSpace::from_kv(kv);
  const long long settings = kv.get_int("search.settings", 8);
  const long long trials = kv.get_int("search.trials_per_setting", 5);
  if (settings <= 0 || trials <= 0) throw ConfigError("search budget must be positive");

  const RawStream train = read_stream_csv(base.train_csv);
  const RawStream val = read_stream_csv(base.validation_csv);
  base.model.feature_dim = train.features();
  const fs::path dir = make_run_dir(c, "search", kv.to_string() + base.to_text());

  auto resolve = [&](const SearchSetting& s, std::uint64_t seed) {
    RunConfig rc = base;
    rc.train.lr = s.lr;
    rc.model.dropout = s.dropout;
    rc.train.lambda_rec = s.lambda_rec;
    rc.train.lambda_z = s.lambda_z;
    rc.score.alpha = s.alpha;
    rc.train.label_smooth = s.label_smooth;
    rc.model.spectral_norm = s.spectral_norm;
    rc.train.grad_penalty = s.grad_penalty;
    rc.set_seed(seed);
    return rc;
  };
  const TrialObjective objective = [&](const SearchSetting& s, std::uint64_t seed) {
    RunConfig rc = resolve(s, seed);
    TrainedRun run = train_run(train, val, rc);
    if (run.result.halted) return TrialScore{0.0, 0.0, run.result.epochs_run};
    const auto v = validation_score(run.model, run.weights, preprocess_stream(val, run.stats), rc);
    return TrialScore{v.ap, v.auc, run.result.epochs_run};
  };
  const SearchResult result = hyperparam_search(space, static_cast<std::size_t>(settings),
                                                static_cast<std::size_t>(trials), objective,
                                                base.train.seed);
  write_trial_log((dir / "trials.csv").string(), result);
  RunConfig best = resolve(result.best, base.train.seed);
  write_file(dir / "best_config.txt", best.to_text());
  std::printf("best setting %zu: mean AP %.4f  mean AUC %.4f\n  %s\n", result.best_index,
              result.best_ap, result.best_auc, result.best.describe().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("TBIGAN_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));

  CLI::App app{"Transformer BiGAN anomaly detection for PMU streams"};
  app.require_subcommand(1);

  Common synth_c, train_c, score_c, eval_c, search_c;
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic PMU stream");
  add_common(synth, synth_c);

  std::string train_csv, validation_csv;
  auto* trainc = app.add_subcommand("train", "Fit preprocessing and train a model");
  add_common(trainc, train_c);
  trainc->add_option("--train", train_csv, "Training stream CSV");
  trainc->add_option("--validation", validation_csv, "Labeled validation CSV (early stopping)");

  std::string checkpoint, data_csv;
  auto* score = app.add_subcommand("score", "Score a stream with a trained checkpoint");
  add_common(score, score_c);
  score->add_option("--checkpoint", checkpoint, "checkpoint.json from train")->required();
  score->add_option("--data", data_csv, "Stream CSV to score");

  std::string trace_csv, scores_csv, eval_data, counts;
  std::optional<double> val_fraction;
  auto* evaluate = app.add_subcommand("evaluate", "Metrics, curves and thresholds");
  add_common(evaluate, eval_c);
  evaluate->add_option("--trace", trace_csv, "trace.csv from score");
  evaluate->add_option("--scores", scores_csv, "CSV with score,label columns");
  evaluate->add_option("--data", eval_data, "Labeled stream CSV for frame-level metrics");
  evaluate->add_option("--val-fraction", val_fraction, "Leading share used to pick the threshold");
  evaluate->add_option("--counts", counts, "Confusion counts tn,fp,fn,tp");

  std::string search_train, search_val;
  auto* search = app.add_subcommand("search", "Random hyperparameter search");
  add_common(search, search_c);
  search->add_option("--train", search_train, "Training stream CSV");
  search->add_option("--validation", search_val, "Labeled validation CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*trainc) return cmd_train(train_c, train_csv, validation_csv);
    if (*score) return cmd_score(score_c, checkpoint, data_csv);
    if (*evaluate) return cmd_evaluate(eval_c, trace_csv, scores_csv, eval_data, val_fraction, counts);
    if (*search) return cmd_search(search_c, search_train, search_val);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const UndefinedMetricError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kConfig;
}
