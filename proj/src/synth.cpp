#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tbigan/errors.hpp"
#include "tbigan/keyvalue.hpp"
#include "tbigan/pmu_data.hpp"

namespace tbigan {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Variable layout inside one PMU block.
enum Var : std::size_t {
  kVaMag, kVbMag, kVcMag, kIaMag, kIbMag, kIcMag,
  kVaAng, kVbAng, kVcAng, kIaAng, kIbAng, kIcAng,
  kFreq, kRocof
};

constexpr const char* kVarNames[kVariablesPerPmu] = {
    "va_mag", "vb_mag", "vc_mag", "ia_mag", "ib_mag", "ic_mag", "va_ang",
    "vb_ang", "vc_ang", "ia_ang", "ib_ang", "ic_ang", "freq",   "rocof"};

enum class Group { kVoltage, kCurrent, kFrequency };

Group group_of(std::size_t var) {
  switch (var) {
    case kVaMag: case kVbMag: case kVcMag: case kVaAng: case kVbAng: case kVcAng:
      return Group::kVoltage;
    case kIaMag: case kIbMag: case kIcMag: case kIaAng: case kIbAng: case kIcAng:
      return Group::kCurrent;
    default:
      return Group::kFrequency;
  }
}

double wrap_angle(double a) {
  return std::remainder(a, kTwoPi);
}

struct SiteProfile {
  double v_base, i_base, delta, pf;
  double own_freq, own_phase, drift;
  double angle_phase;
  double imbalance_v[3], imbalance_i[3];
};

std::size_t frame_index(double seconds, double rate_hz) {
  return static_cast<std::size_t>(std::llround(seconds * rate_hz));
}

}  // namespace

std::string to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::kStep: return "step";
    case AnomalyKind::kFrequencyExcursion: return "frequency_excursion";
    case AnomalyKind::kDropout: return "dropout";
    case AnomalyKind::kOscillation: return "oscillation";
  }
  return "unknown";
}

AnomalyKind parse_anomaly_kind(const std::string& text) {
  if (text == "step") return AnomalyKind::kStep;
  if (text == "frequency_excursion" || text == "frequency") return AnomalyKind::kFrequencyExcursion;
  if (text == "dropout") return AnomalyKind::kDropout;
  if (text == "oscillation") return AnomalyKind::kOscillation;
  throw ConfigError("unknown anomaly kind '" + text +
                    "' (expected step, frequency_excursion, dropout or oscillation)");
}

std::vector<std::string> pmu_feature_names(std::size_t channels) {
  std::vector<std::string> names;
  names.reserve(channels * kVariablesPerPmu);
  for (std::size_t p = 0; p < channels; ++p) {
    for (const char* v : kVarNames) names.push_back("pmu" + std::to_string(p) + "_" + v);
  }
  return names;
}

std::size_t SynthConfig::frame_count() const {
  return static_cast<std::size_t>(std::floor(duration_s * rate_hz + 1e-9));
}

void SynthConfig::validate() const {
  if (channels == 0) throw ConfigError("synth: channels must be >= 1");
  if (!(rate_hz > 0.0)) throw ConfigError("synth: rate_hz must be positive");
  if (!(duration_s > 0.0)) throw ConfigError("synth: duration_s must be positive");
  if (!(severity >= 0.0)) throw ConfigError("synth: severity must be non-negative");
  if (split_s && (*split_s <= 0.0 || *split_s >= duration_s)) {
    throw ConfigError("synth: split_s must lie inside (0, duration_s)");
  }
  auto sorted = anomalies;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& s = sorted[i];
    if (!(s.end_s > s.start_s)) throw ConfigError("synth: anomaly segment end must follow start");
    if (s.start_s < 0.0 || s.end_s > duration_s) {
      throw ConfigError("synth: anomaly segment outside the stream duration");
    }
    if (s.pmu >= static_cast<int>(channels)) throw ConfigError("synth: anomaly pmu out of range");
    if (i > 0 && s.start_s < sorted[i - 1].end_s) {
      throw ConfigError("synth: overlapping anomaly segments at " + format_double(s.start_s) +
                        " s");
    }
  }
}

SynthConfig SynthConfig::parse(const std::string& text) {
  const auto kv = KeyValueConfig::parse(text);
  SynthConfig c;
  const auto channels = kv.get_int("channels", static_cast<long long>(c.channels));
  if (channels <= 0) throw ConfigError("synth: channels must be >= 1");
  c.channels = static_cast<std::size_t>(channels);
  c.rate_hz = kv.get_double("rate_hz", c.rate_hz);
  c.duration_s = kv.get_double("duration_s", c.duration_s);
  c.snr_voltage_db = kv.get_double("snr_db.voltage", c.snr_voltage_db);
  c.snr_current_db = kv.get_double("snr_db.current", c.snr_current_db);
  c.snr_frequency_db = kv.get_double("snr_db.frequency", c.snr_frequency_db);
  c.severity = kv.get_double("severity", c.severity);
  if (kv.contains("split_s")) c.split_s = kv.get_double("split_s", 0.0);
  for (const auto& line : kv.get_all("anomaly")) {
    std::istringstream in(line);
    std::string start, end, kind, pmu;
    if (!(in >> start >> end >> kind)) {
      throw ConfigError("synth: anomaly lines are 'start_s end_s kind [pmu]', got '" + line + "'");
    }
    AnomalySegment seg;
    seg.start_s = parse_double(start, "anomaly start");
    seg.end_s = parse_double(end, "anomaly end");
    seg.kind = parse_anomaly_kind(kind);
    if (in >> pmu) seg.pmu = static_cast<int>(parse_double(pmu, "anomaly pmu"));
    c.anomalies.push_back(seg);
  }
  c.validate();
  return c;
}

SynthConfig SynthConfig::load(const std::string& path) {
  const auto kv = KeyValueConfig::load(path);
  return parse(kv.to_string());
}

std::string SynthConfig::to_text() const {
  std::ostringstream os;
  os << "channels = " << channels << '\n'
     << "rate_hz = " << format_double(rate_hz) << '\n'
     << "duration_s = " << format_double(duration_s) << '\n'
     << "snr_db.voltage = " << format_double(snr_voltage_db) << '\n'
     << "snr_db.current = " << format_double(snr_current_db) << '\n'
     << "snr_db.frequency = " << format_double(snr_frequency_db) << '\n'
     << "severity = " << format_double(severity) << '\n';
  if (split_s) os << "split_s = " << format_double(*split_s) << '\n';
  for (const auto& a : anomalies) {
    os << "anomaly = " << format_double(a.start_s) << ' ' << format_double(a.end_s) << ' '
       << to_string(a.kind);
    if (a.pmu >= 0) os << ' ' << a.pmu;
    os << '\n';
  }
  return os.str();
}

SynthResult synth_stream(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const std::size_t sites = config.channels;
  const std::size_t n = config.frame_count();
  const std::size_t f = config.feature_count();
  const double dt = 1.0 / config.rate_hz;

  // Shared load/frequency profile plus per-site personality.
  const double load_phase_a = uniform(0, kTwoPi), load_phase_b = uniform(0, kTwoPi);
  const double freq_phase_a = uniform(0, kTwoPi), freq_phase_b = uniform(0, kTwoPi);
  std::vector<SiteProfile> profile(sites);
  for (auto& s : profile) {
    s.v_base = uniform(2.0e5, 2.5e5);
    s.i_base = uniform(300.0, 600.0);
    s.delta = uniform(-0.2, 0.2);
    s.pf = uniform(0.15, 0.35);
    s.own_freq = uniform(0.08, 0.3);
    s.own_phase = uniform(0, kTwoPi);
    s.drift = uniform(-1e-5, 1e-5);
    s.angle_phase = uniform(0, kTwoPi);
    for (int k = 0; k < 3; ++k) {
      s.imbalance_v[k] = uniform(-0.003, 0.003);
      s.imbalance_i[k] = uniform(-0.01, 0.01);
    }
  }

  std::vector<double> clean(n * f);
  for (std::size_t r = 0; r < n; ++r) {
    const double t = static_cast<double>(r) * dt;
    const double load = 1.0 + 0.02 * std::sin(kTwoPi * 0.021 * t + load_phase_a) +
                        0.01 * std::sin(kTwoPi * 0.13 * t + load_phase_b);
    const double grid_f = 60.0 + 0.012 * std::sin(kTwoPi * 0.07 * t + freq_phase_a) +
                          0.006 * std::sin(kTwoPi * 0.31 * t + freq_phase_b);
    const double grid_df = 0.012 * kTwoPi * 0.07 * std::cos(kTwoPi * 0.07 * t + freq_phase_a) +
                           0.006 * kTwoPi * 0.31 * std::cos(kTwoPi * 0.31 * t + freq_phase_b);
    for (std::size_t p = 0; p < sites; ++p) {
      const auto& s = profile[p];
      const double own = std::sin(kTwoPi * s.own_freq * t + s.own_phase);
      const double lp = load + 0.006 * own + s.drift * t;
      double* row = clean.data() + r * f + p * kVariablesPerPmu;
      const double swing = 0.03 * std::sin(kTwoPi * 0.05 * t + s.angle_phase);
      for (int k = 0; k < 3; ++k) {
        const double phase = -kTwoPi / 3.0 * k;
        row[kVaMag + k] = s.v_base * (1.0 - 0.25 * (lp - 1.0)) * (1.0 + s.imbalance_v[k]);
        row[kIaMag + k] = s.i_base * lp * (1.0 + s.imbalance_i[k]);
        const double va = wrap_angle(s.delta + swing + phase);
        row[kVaAng + k] = va;
        row[kIaAng + k] = wrap_angle(va - s.pf - 0.05 * (lp - 1.0));
      }
      row[kFreq] = grid_f + 0.002 * own;
      row[kRocof] = grid_df +
                    0.002 * kTwoPi * s.own_freq * std::cos(kTwoPi * s.own_freq * t + s.own_phase);
    }
  }

  // Noise level per channel from the RMS of its base signal.
  std::vector<double> noise_std(f);
  for (std::size_t c = 0; c < f; ++c) {
    double power = 0.0;
    for (std::size_t r = 0; r < n; ++r) power += clean[r * f + c] * clean[r * f + c];
    power /= static_cast<double>(std::max<std::size_t>(n, 1));
    double snr = config.snr_frequency_db;
    switch (group_of(c % kVariablesPerPmu)) {
      case Group::kVoltage: snr = config.snr_voltage_db; break;
      case Group::kCurrent: snr = config.snr_current_db; break;
      case Group::kFrequency: break;
    }
    noise_std[c] = std::sqrt(power) * std::pow(10.0, -snr / 20.0);
  }

  SynthResult result;
  result.stream.feature_names = pmu_feature_names(sites);
  result.stream.labels.assign(n, 0);
  std::vector<std::pair<std::size_t, std::size_t>> dropouts;

  for (auto seg : config.anomalies) {
    if (seg.pmu < 0) seg.pmu = static_cast<int>(rng() % sites);
    const std::size_t begin = std::min(frame_index(seg.start_s, config.rate_hz), n);
    const std::size_t end = std::min(frame_index(seg.end_s, config.rate_hz), n);
    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
    const double osc_freq = uniform(1.5, 3.0);
    const double sev = config.severity;
    const std::size_t base = static_cast<std::size_t>(seg.pmu) * kVariablesPerPmu;
    const double span = static_cast<double>(end - begin) * dt;
    for (std::size_t r = begin; r < end; ++r) {
      result.stream.labels[r] = 1;
      double* row = clean.data() + r * f;
      const double tau = static_cast<double>(r - begin) * dt;
      switch (seg.kind) {
        case AnomalyKind::kStep:
          for (std::size_t v = kVaMag; v <= kIcMag; ++v) row[base + v] *= 1.0 + sign * 0.03 * sev;
          for (std::size_t v = kVaAng; v <= kIcAng; ++v) {
            row[base + v] = wrap_angle(row[base + v] + sign * 0.03 * sev);
          }
          break;
        case AnomalyKind::kFrequencyExcursion: {
          const double amp = sign * 0.05 * sev;
          const double x = std::numbers::pi * tau / span;
          for (std::size_t p = 0; p < sites; ++p) {
            row[p * kVariablesPerPmu + kFreq] += amp * std::sin(x) * std::sin(x);
            row[p * kVariablesPerPmu + kRocof] +=
                amp * std::numbers::pi / span * std::sin(2.0 * x);
          }
          break;
        }
        case AnomalyKind::kDropout:
          break;
        case AnomalyKind::kOscillation: {
          const double wave = 0.015 * sev * std::sin(kTwoPi * osc_freq * tau);
          for (std::size_t v = kVaMag; v <= kIcMag; ++v) row[base + v] *= 1.0 + wave;
          for (std::size_t v = kVaAng; v <= kIcAng; ++v) {
            row[base + v] = wrap_angle(row[base + v] + wave);
          }
          break;
        }
      }
    }
    if (seg.kind == AnomalyKind::kDropout) {
      for (std::size_t r = begin; r < end; ++r) dropouts.emplace_back(r, base);
    }
    result.anomalies.push_back(seg);
  }

  result.stream.timestamps.resize(n);
  result.stream.values.resize(n * f);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    result.stream.timestamps[r] = static_cast<double>(r) * dt;
    for (std::size_t c = 0; c < f; ++c) {
      result.stream.values[r * f + c] = clean[r * f + c] + noise_std[c] * gauss(rng);
    }
  }
  for (auto [r, base] : dropouts) {
    for (std::size_t v = 0; v < kVariablesPerPmu; ++v) {
      result.stream.values[r * f + base + v] = 0.0;
      clean[r * f + base + v] = 0.0;
    }
  }
  result.clean = std::move(clean);
  return result;
}

}  // namespace tbigan
