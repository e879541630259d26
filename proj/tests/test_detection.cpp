#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "tbigan/detection.hpp"
#include "tbigan/errors.hpp"

using namespace tbigan;

namespace {

ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.feature_dim = 3;
  c.window_len = 6;
  c.model_dim = 8;
  c.latent_dim = 4;
  c.num_blocks = 1;
  c.num_heads = 2;
  c.attn_window = 3;
  c.disc_blocks = 1;
  c.init_seed = seed;
  return c;
}

double softplus_ref(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

std::vector<AnomalyScore> scores_of(const std::vector<double>& totals) {
  std::vector<AnomalyScore> out;
  for (std::size_t i = 0; i < totals.size(); ++i) {
    AnomalyScore s;
    s.total = totals[i];
    s.window_start = i;
    out.push_back(s);
  }
  return out;
}

PreparedStream stream_of(std::size_t frames, std::size_t features, double value) {
  PreparedStream s;
  s.feature_count = features;
  for (std::size_t i = 0; i < frames; ++i) {
    s.timestamps.push_back(static_cast<double>(i) / 30.0);
    s.labels.push_back(0);
    for (std::size_t f = 0; f < features; ++f) s.values.push_back(value);
  }
  return s;
}

}  // namespace

TEST_CASE("weights: equal variances give unit weights") {
  const std::vector<double> v = {0, 10, 2, 12, 0, 10, 2, 12};  // rows of (a, a + 10)
  const auto w = fit_weights(v, 2);
  CHECK(w.w[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w.w[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weights: variances 1 and 4 normalize to 1.6 and 0.4") {
  const std::vector<double> v = {-1, -2, 1, 2};
  const auto w = fit_weights(v, 2);
  CHECK(w.w[0] == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(w.w[1] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("weights: zero-variance feature excluded, mean stays 1 over all features") {
  const std::vector<double> v = {-1, 5, -2, 1, 5, 2};
  const auto w = fit_weights(v, 3);
  CHECK(w.w[1] == 0.0);
  CHECK(w.w[0] + w.w[1] + w.w[2] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(w.w[0] / w.w[2] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("weights: all zero-variance is an error") {
  const std::vector<double> v = {1, 2, 1, 2};
  CHECK_THROWS_AS(fit_weights(v, 2), DataError);
}

TEST_CASE("weights: window overload counts every frame of every window") {
  PmuWindow a{0, 2, 2, {-1, -2, 1, 2}, false};
  const auto w = fit_weights(std::vector<PmuWindow>{a, a});
  CHECK(w.w[0] == doctest::Approx(1.6).epsilon(1e-12));
}

TEST_CASE("combine_score reassembles the terms") {
  CHECK(combine_score(2.0, 3.0, 4.0, 0.6, 1.0) == doctest::Approx(0.6 * 2 + 0.4 * 3 + 4));
  CHECK(combine_score(2.0, 3.0, 4.0, 1.0, 0.0) == 2.0);
  CHECK(combine_score(0.0, 0.0, 0.0, 0.5, 2.0) == 0.0);
}

TEST_CASE("score_window matches a step-by-step recomputation") {
  TBiGanModel model(small_config());
  model.set_training(false);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  const FeatureWeights weights{{0.5, 1.5, 1.0}};
  for (int trial = 0; trial < 5; ++trial) {
    PmuWindow w{static_cast<std::size_t>(trial), 6, 3, {}, false};
    for (int i = 0; i < 18; ++i) w.data.push_back(n01(rng));
    const double alpha = 0.3 + 0.1 * trial, gamma = 0.5 * trial;
    const AnomalyScore s = score_window(model, weights, w, alpha, gamma);

    NoGradGuard ng;
    const Tensor x({1, 6, 3}, w.data);
    const Tensor z = model.encode(x);
    const Tensor xh = model.generate(z);
    const Tensor z2 = model.encode(xh);
    const double logit = model.discriminate_logits(x, z).data()[0];
    double recon = 0.0;
    for (std::size_t i = 0; i < 18; ++i) {
      const double d = w.data[i] - xh.data()[i];
      recon += weights.w[i % 3] * d * d;
    }
    recon /= 18.0;
    double latent = 0.0;
    for (std::size_t i = 0; i < z.data().size(); ++i) {
      const double d = z2.data()[i] - z.data()[i];
      latent += d * d;
    }
    const double disc = softplus_ref(-logit);
    CHECK(std::abs(s.recon_term - recon) < 1e-10);
    CHECK(std::abs(s.disc_term - disc) < 1e-10);
    CHECK(std::abs(s.latent_term - latent) < 1e-10);
    CHECK(std::abs(s.total - (alpha * recon + (1 - alpha) * disc + gamma * latent)) < 1e-10);
    CHECK(s.total == combine_score(s.recon_term, s.disc_term, s.latent_term, alpha, gamma));
    CHECK(s.window_start == static_cast<std::size_t>(trial));
    CHECK(s.recon_term >= 0.0);
    CHECK(s.disc_term >= 0.0);
    CHECK(s.latent_term >= 0.0);
  }
}

TEST_CASE("score_windows batches agree with single-window scoring") {
  TBiGanModel model(small_config());
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::vector<PmuWindow> ws;
  for (std::size_t k = 0; k < 7; ++k) {
    PmuWindow w{k, 6, 3, {}, false};
    for (int i = 0; i < 18; ++i) w.data.push_back(n01(rng));
    ws.push_back(w);
  }
  const FeatureWeights weights{{1, 1, 1}};
  const auto batched = score_windows(model, weights, ws, 0.6, 1.0, 3);
  REQUIRE(batched.size() == 7);
  for (std::size_t k = 0; k < 7; ++k) {
    const auto single = score_window(model, weights, ws[k], 0.6, 1.0);
    CHECK(std::abs(single.total - batched[k].total) < 1e-12);
    CHECK(batched[k].window_start == k);
  }
}

TEST_CASE("threshold: k < 2 is a config error") {
  CHECK_THROWS_AS(ThresholdState(1, 3.0), ConfigError);
  CHECK_THROWS_AS(ThresholdState(0, 3.0), ConfigError);
  ScoreParams p;
  p.k = 1;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("threshold: constant buffer, larger score flagged") {
  ThresholdState st(4, 2.0);
  for (int i = 0; i < 4; ++i) {
    const auto d = update_threshold(st, 1.0);
    CHECK_FALSE(d.flag);
    CHECK(std::isinf(d.theta));
  }
  CHECK(st.theta() == 1.0);
  const auto d = update_threshold(st, 5.0);
  CHECK(d.theta == 1.0);
  CHECK(d.flag);
}

TEST_CASE("threshold: equal score is not flagged (strict inequality)") {
  ThresholdState st(4, 2.0);
  for (int i = 0; i < 4; ++i) update_threshold(st, 1.0);
  const auto d = update_threshold(st, 1.0);
  CHECK(d.theta == 1.0);
  CHECK_FALSE(d.flag);
}

TEST_CASE("threshold: buffer 0,2,0,2 with c = 1 gives theta 2") {
  for (double score : {2.5, 1.9}) {
    ThresholdState st(4, 1.0);
    for (double v : {0.0, 2.0, 0.0, 2.0}) update_threshold(st, v);
    const auto d = update_threshold(st, score);
    CHECK(d.theta == 2.0);
    CHECK(d.flag == (score == 2.5));
  }
}

TEST_CASE("threshold: FIFO buffer holds at most k scores") {
  ThresholdState st(3, 1.0);
  for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) update_threshold(st, v);
  REQUIRE(st.size() == 3);
  CHECK(st.buffer()[0] == 3.0);
  CHECK(st.buffer()[2] == 5.0);
}

TEST_CASE("threshold: quarantine keeps flagged scores out of the buffer") {
  ThresholdState st(4, 2.0, true);
  for (int i = 0; i < 4; ++i) update_threshold(st, 1.0);
  CHECK(update_threshold(st, 9.0).flag);
  CHECK(st.theta() == 1.0);
  CHECK(update_threshold(st, 9.0).flag);

  ThresholdState plain(4, 2.0);
  for (int i = 0; i < 4; ++i) update_threshold(plain, 1.0);
  update_threshold(plain, 9.0);
  CHECK(plain.theta() > 1.0);
}

TEST_CASE("threshold: warm-up never flags") {
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> v;
  for (int i = 0; i < 50; ++i) v.push_back(i == 10 ? 1e9 : ex(rng));
  ScoreParams p;
  p.k = 40;
  p.c = 0.0;
  const auto trace = apply_threshold(scores_of(v), p);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK_FALSE(trace[i].flag);
    CHECK(std::isinf(trace[i].theta));
  }
  CHECK(std::isfinite(trace[40].theta));
}

TEST_CASE("threshold: constant-score stream never flags") {
  ScoreParams p;
  p.k = 5;
  p.c = 0.0;
  const auto trace = apply_threshold(scores_of(std::vector<double>(100, 0.37)), p);
  for (const auto& r : trace) CHECK_FALSE(r.flag);
}

TEST_CASE("threshold: offsetting every score shifts theta and keeps flags") {
  std::mt19937_64 rng(4);
  std::lognormal_distribution<double> ln(0.0, 1.0);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> v, shifted;
    const double delta = (rep - 5) * 3.7;
    for (int i = 0; i < 400; ++i) {
      v.push_back(ln(rng));
      shifted.push_back(v.back() + delta);
    }
    ScoreParams p;
    p.k = 20 + rep;
    p.c = 1.0 + 0.25 * rep;
    const auto a = apply_threshold(scores_of(v), p);
    const auto b = apply_threshold(scores_of(shifted), p);
    std::size_t flags = 0, disagreements = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (std::isinf(a[i].theta)) {
        CHECK(std::isinf(b[i].theta));
        continue;
      }
      CHECK(b[i].theta - a[i].theta == doctest::Approx(delta).epsilon(1e-9));
      // A score lying within rounding of theta may legitimately swap sides.
      if (a[i].flag != b[i].flag && std::abs(v[i] - a[i].theta) > 1e-9) ++disagreements;
      flags += a[i].flag;
    }
    CHECK(disagreements == 0);
    CHECK(flags > 0);
  }
}

TEST_CASE("score_stream: identical windows never flag, one spike flags exactly once") {
  const ModelConfig mc = small_config(9);
  TBiGanModel model(mc);
  const FeatureWeights weights{{1, 1, 1}};
  ScoreParams p;
  p.k = 10;
  p.c = 3.0;

  PreparedStream flat = stream_of(120, 3, 0.25);
  const auto quiet = score_stream(model, weights, flat, 6, 6, p);
  CHECK(quiet.size() == window_count(120, 6, 6));
  for (const auto& r : quiet) CHECK_FALSE(r.flag);

  // Spike one frame of window 15 (non-overlapping windows, stride = T).
  PreparedStream spiky = flat;
  for (std::size_t f = 0; f < 3; ++f) spiky.values[(15 * 6 + 2) * 3 + f] = 40.0;
  const auto trace = score_stream(model, weights, spiky, 6, 6, p);
  REQUIRE(trace.size() == 20);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    CAPTURE(i);
    CHECK(trace[i].flag == (i == 15));
  }
}

TEST_CASE("score_stream: trace length equals the window count") {
  TBiGanModel model(small_config());
  const FeatureWeights weights{{1, 1, 1}};
  ScoreParams p;
  p.k = 4;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  PreparedStream s = stream_of(53, 3, 0.0);
  for (auto& v : s.values) v = n01(rng);
  for (std::size_t stride : {1u, 2u, 5u}) {
    const auto trace = score_stream(model, weights, s, 6, stride, p);
    CHECK(trace.size() == window_count(53, 6, stride));
    CHECK(trace.back().score.window_start == (trace.size() - 1) * stride);
  }
}

TEST_CASE("score_stream: non-finite input is a numerical error") {
  TBiGanModel model(small_config());
  const FeatureWeights weights{{1, 1, 1}};
  PreparedStream s = stream_of(20, 3, 0.0);
  s.values[30] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(score_stream(model, weights, s, 6, 1, ScoreParams{}), NumericalError);
}

TEST_CASE("trace CSV round trip") {
  std::vector<TraceRow> rows(3);
  rows[0].score = {1.5, 0.5, 2.0, 0.125, 0};
  rows[0].theta = std::numeric_limits<double>::infinity();
  rows[1].score = {0.1 + 0.2, 1e-17, 3.0, 0.0, 1};
  rows[1].theta = 2.0 / 3.0;
  rows[1].flag = true;
  rows[1].label = true;
  rows[2].score = {4.0, 1.0, 1.0, 1.0, 2};
  rows[2].theta = 1.0;
  rows[2].label = false;
  const std::string text = format_trace_csv(rows);
  CHECK(text.rfind("window_start,recon_term,disc_term,latent_term,total,theta,flag,label\n", 0) ==
        0);
  const auto back = parse_trace_csv(text);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].score.total == rows[i].score.total);
    CHECK(back[i].score.recon_term == rows[i].score.recon_term);
    CHECK(back[i].score.window_start == rows[i].score.window_start);
    CHECK(back[i].flag == rows[i].flag);
    CHECK(back[i].label == rows[i].label);
  }
  CHECK(std::isinf(back[0].theta));
  CHECK(back[1].theta == rows[1].theta);
  CHECK(format_trace_csv(back) == text);
}

TEST_CASE("trace CSV rejects malformed rows") {
  CHECK_THROWS_AS(parse_trace_csv("bogus\n"), DataError);
  CHECK_THROWS_AS(
      parse_trace_csv("window_start,recon_term,disc_term,latent_term,total,theta,flag,label\n"
                      "0,1,1,1,x,1,0,\n"),
      DataError);
}

TEST_CASE("score params: key-value round trip and validation") {
  KeyValueConfig kv;
  kv.set("score.alpha", "0.8");
  kv.set("score.gamma", "0");
  kv.set("score.k", "50");
  kv.set("score.c", "2.5");
  kv.set("score.quarantine", "true");
  const auto p = ScoreParams::from_kv(kv);
  CHECK(p.alpha == 0.8);
  CHECK(p.gamma == 0.0);
  CHECK(p.k == 50);
  CHECK(p.c == 2.5);
  CHECK(p.quarantine);
  KeyValueConfig out;
  p.to_kv(out);
  const auto q = ScoreParams::from_kv(out);
  CHECK(q.alpha == p.alpha);
  CHECK(q.k == p.k);
  CHECK(q.quarantine == p.quarantine);

  KeyValueConfig bad;
  bad.set("score.alpha", "1.5");
  CHECK_THROWS_AS(ScoreParams::from_kv(bad), ConfigError);
  bad = KeyValueConfig{};
  bad.set("score.gamma", "-1");
  CHECK_THROWS_AS(ScoreParams::from_kv(bad), ConfigError);
}
