#include "tbigan/pmu_data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "tbigan/errors.hpp"
#include "tbigan/keyvalue.hpp"

namespace tbigan {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NaN" || cell == "nan" || cell == "NAN";
}

double parse_cell(const std::string& cell, std::size_t line, const std::string& origin) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw DataError(origin + ":" + std::to_string(line) + ": cannot parse '" + cell + "'");
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// RawStream

PmuFrame RawStream::frame(std::size_t r) const {
  PmuFrame f;
  f.timestamp = timestamps.at(r);
  auto rv = row(r);
  f.features.assign(rv.begin(), rv.end());
  if (has_labels()) f.label = labels[r] != 0;
  return f;
}

void RawStream::append(const PmuFrame& frame) {
  if (frame.features.size() != features()) {
    throw DataError("frame has " + std::to_string(frame.features.size()) + " features, stream has " +
                    std::to_string(features()));
  }
  if (!timestamps.empty() && !(frame.timestamp > timestamps.back())) {
    throw DataError("timestamps must be strictly increasing");
  }
  if (frames() > 0 && has_labels() != frame.label.has_value()) {
    throw DataError("frame labelling must be consistent across a stream");
  }
  timestamps.push_back(frame.timestamp);
  values.insert(values.end(), frame.features.begin(), frame.features.end());
  if (frame.label) labels.push_back(*frame.label ? 1 : 0);
}

RawStream RawStream::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, frames());
  begin = std::min(begin, end);
  RawStream out;
  out.feature_names = feature_names;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * features()),
                    values.begin() + static_cast<std::ptrdiff_t>(end * features()));
  if (has_labels()) {
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      labels.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void RawStream::validate() const {
  if (values.size() != frames() * features()) throw DataError("stream values are ragged");
  if (has_labels() && labels.size() != frames()) throw DataError("label column is ragged");
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (!(timestamps[i] > timestamps[i - 1])) {
      throw DataError("timestamps must be strictly increasing (row " + std::to_string(i + 1) +
                      ")");
    }
  }
}

RawStream parse_stream_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(origin + ": empty CSV");
  auto header = split_csv_line(line);
  for (auto& h : header) h = strip(h);
  if (header.empty() || header[0] != "timestamp") {
    throw DataError(origin + ": first column must be 'timestamp'");
  }
  const bool labelled = header.size() > 1 && header.back() == "label";
  const std::size_t feature_end = labelled ? header.size() - 1 : header.size();
  if (feature_end < 2) throw DataError(origin + ": no feature columns");

  RawStream s;
  s.feature_names.assign(header.begin() + 1, header.begin() + static_cast<std::ptrdiff_t>(feature_end));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (strip(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " columns, got " +
                      std::to_string(cells.size()));
    }
    const auto ts = strip(cells[0]);
    if (is_missing(ts)) throw DataError(origin + ":" + std::to_string(lineno) + ": missing timestamp");
    s.timestamps.push_back(parse_cell(ts, lineno, origin));
    for (std::size_t c = 1; c < feature_end; ++c) {
      const auto cell = strip(cells[c]);
      s.values.push_back(is_missing(cell) ? kNaN : parse_cell(cell, lineno, origin));
    }
    if (labelled) {
      const auto cell = strip(cells.back());
      if (cell == "0") {
        s.labels.push_back(0);
      } else if (cell == "1") {
        s.labels.push_back(1);
      } else {
        throw DataError(origin + ":" + std::to_string(lineno) + ": label must be 0 or 1");
      }
    }
  }
  s.validate();
  return s;
}

RawStream read_stream_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_stream_csv(ss.str(), path);
}

std::string format_stream_csv(const RawStream& stream) {
  std::string out = "timestamp";
  for (const auto& n : stream.feature_names) out += "," + n;
  if (stream.has_labels()) out += ",label";
  out += '\n';
  for (std::size_t r = 0; r < stream.frames(); ++r) {
    out += format_double(stream.timestamps[r]);
    for (double v : stream.row(r)) {
      out += ',';
      if (!std::isnan(v)) out += format_double(v);
    }
    if (stream.has_labels()) out += stream.labels[r] ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

void write_stream_csv(const std::string& path, const RawStream& stream) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << format_stream_csv(stream);
  if (!f) throw DataError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Preprocessing

double FeatureStats::scale() const { return zero_variance ? 1.0 : std::sqrt(variance); }

bool selective_log_rule(double raw_min, double raw_max) { return raw_min > 100.0 && raw_max > 1000.0; }

PreprocessStats fit_preprocess(const RawStream& training, const std::string& split_id) {
  const std::size_t n = training.frames();
  const std::size_t f = training.features();
  if (n == 0 || f == 0) throw DataError("cannot fit preprocessing on an empty stream");

  PreprocessStats stats;
  stats.split_id = split_id;
  stats.features.resize(f);
  for (std::size_t c = 0; c < f; ++c) {
    auto& fs = stats.features[c];
    fs.index = c;
    double total = 0.0;
    std::size_t present = 0;
    double mn = std::numeric_limits<double>::infinity();
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < n; ++r) {
      const double v = training.at(r, c);
      if (std::isnan(v)) continue;
      total += v;
      ++present;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    fs.missing_fraction = static_cast<double>(n - present) / static_cast<double>(n);
    if (fs.missing_fraction > 0.5) {
      throw DataError("feature " + std::to_string(c) + " ('" + training.feature_names[c] +
                      "') is missing in more than 50% of training rows");
    }
    fs.impute_value = total / static_cast<double>(present);
    fs.raw_min = mn;
    fs.raw_max = mx;
    fs.apply_log = selective_log_rule(mn, mx);

    // Mean/variance in the transformed space, imputed cells included.
    auto transformed = [&](double v) {
      if (std::isnan(v)) v = fs.impute_value;
      return fs.apply_log ? std::log1p(v) : v;
    };
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += transformed(training.at(r, c));
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = transformed(training.at(r, c)) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    fs.mean = mean;
    fs.variance = var;
    fs.zero_variance = var <= 1e-24 * std::max(1.0, mean * mean);
  }
  return stats;
}

RawStream impute_missing(const RawStream& stream, const PreprocessStats& stats) {
  if (stats.features.size() != stream.features()) {
    throw DataError("stats cover " + std::to_string(stats.features.size()) +
                    " features, stream has " + std::to_string(stream.features()));
  }
  RawStream out = stream;
  const std::size_t f = stream.features();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (std::isnan(out.values[i])) {
      const auto& fs = stats.features[i % f];
      if (fs.missing_fraction > 0.5) {
        throw DataError("feature " + std::to_string(i % f) + " was mostly missing in training");
      }
      out.values[i] = fs.impute_value;
    }
  }
  return out;
}

namespace {

double transform_value(double v, const FeatureStats& fs) {
  if (std::isnan(v)) v = fs.impute_value;
  if (fs.apply_log) {
    if (v <= -1.0) {
      spdlog::warn("feature {} received {} (log1p undefined); clamping to training minimum {}",
                   fs.index, v, fs.raw_min);
      v = fs.raw_min;
    }
    v = std::log1p(v);
  }
  return (v - fs.mean) / fs.scale();
}

}  // namespace

std::vector<double> apply_preprocess(const PmuFrame& frame, const PreprocessStats& stats) {
  if (frame.features.size() != stats.features.size()) {
    throw DataError("frame has " + std::to_string(frame.features.size()) +
                    " features, stats expect " + std::to_string(stats.features.size()));
  }
  std::vector<double> out(frame.features.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = transform_value(frame.features[c], stats.features[c]);
  }
  return out;
}

PreparedStream preprocess_stream(const RawStream& stream, const PreprocessStats& stats) {
  if (stats.features.size() != stream.features()) {
    throw DataError("stream has " + std::to_string(stream.features()) +
                    " features, preprocessing stats expect " +
                    std::to_string(stats.features.size()));
  }
  PreparedStream out;
  out.feature_count = stream.features();
  out.timestamps = stream.timestamps;
  out.labels = stream.labels;
  out.values.resize(stream.values.size());
  const std::size_t f = stream.features();
  for (std::size_t i = 0; i < stream.values.size(); ++i) {
    out.values[i] = transform_value(stream.values[i], stats.features[i % f]);
  }
  return out;
}

nlohmann::json PreprocessStats::to_json(bool include_timestamp) const {
  nlohmann::json j;
  j["split_id"] = split_id;
  if (include_timestamp) j["fitted_at"] = fitted_at;
  auto& arr = j["features"] = nlohmann::json::array();
  for (const auto& f : features) {
    arr.push_back({{"index", f.index},
                   {"mean", f.mean},
                   {"variance", f.variance},
                   {"apply_log", f.apply_log},
                   {"impute_value", f.impute_value},
                   {"raw_min", f.raw_min},
                   {"raw_max", f.raw_max},
                   {"missing_fraction", f.missing_fraction},
                   {"zero_variance", f.zero_variance}});
  }
  return j;
}

PreprocessStats PreprocessStats::from_json(const nlohmann::json& j) {
  PreprocessStats s;
  try {
    s.split_id = j.at("split_id").get<std::string>();
    s.fitted_at = j.value("fitted_at", std::string{});
    for (const auto& f : j.at("features")) {
      FeatureStats fs;
      fs.index = f.at("index").get<std::size_t>();
      fs.mean = f.at("mean").get<double>();
      fs.variance = f.at("variance").get<double>();
      fs.apply_log = f.at("apply_log").get<bool>();
      fs.impute_value = f.at("impute_value").get<double>();
      fs.raw_min = f.value("raw_min", 0.0);
      fs.raw_max = f.value("raw_max", 0.0);
      fs.missing_fraction = f.value("missing_fraction", 0.0);
      fs.zero_variance = f.value("zero_variance", fs.variance <= 0.0);
      s.features.push_back(fs);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed preprocessing stats: ") + e.what());
  }
  return s;
}

void PreprocessStats::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << to_json().dump(2) << '\n';
}

PreprocessStats PreprocessStats::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  try {
    return from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Windows

std::size_t window_count(std::size_t frames, std::size_t length, std::size_t stride) {
  if (length == 0 || stride == 0) throw ConfigError("window length and stride must be >= 1");
  if (frames < length) return 0;
  return (frames - length) / stride + 1;
}

std::vector<PmuWindow> make_windows(const PreparedStream& stream, std::size_t length,
                                    std::size_t stride) {
  const std::size_t count = window_count(stream.frames(), length, stride);
  if (count == 0) {
    spdlog::warn("stream of {} frames is shorter than the window length {}; no windows",
                 stream.frames(), length);
    return {};
  }
  const std::size_t f = stream.feature_count;
  std::vector<PmuWindow> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PmuWindow w;
    w.start_index = i * stride;
    w.length = length;
    w.features = f;
    const auto begin = stream.values.begin() + static_cast<std::ptrdiff_t>(w.start_index * f);
    w.data.assign(begin, begin + static_cast<std::ptrdiff_t>(length * f));
    if (!stream.labels.empty()) {
      for (std::size_t t = 0; t < length && !w.label; ++t) {
        w.label = stream.labels[w.start_index + t] != 0;
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace tbigan
