#include "tbigan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "tbigan/errors.hpp"
#include "tbigan/keyvalue.hpp"

namespace tbigan {

std::size_t ScoredLabels::positives() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                [](std::uint8_t l) { return l != 0; }));
}

std::size_t ScoredLabels::negatives() const { return labels.size() - positives(); }

void ScoredLabels::validate() const {
  if (scores.size() != labels.size())
    throw ShapeError(fmt::format("{} scores but {} labels", scores.size(), labels.size()));
  if (scores.empty()) throw DataError("no scored samples");
  for (double s : scores)
    if (std::isnan(s)) throw NumericalError("NaN score");
}

namespace {

void require_both_classes(const ScoredLabels& data, const char* what) {
  data.validate();
  if (data.positives() == 0 || data.negatives() == 0)
    throw UndefinedMetricError(std::string(what) + " needs both positive and negative labels");
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(const ScoredLabels& data) {
  std::vector<std::size_t> idx(data.scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return data.scores[a] > data.scores[b]; });
  return idx;
}

// Cumulative (tp, fp) after each group of tied scores, highest score first.
struct Step {
  double score;
  std::size_t tp;
  std::size_t fp;
};

std::vector<Step> threshold_steps(const ScoredLabels& data) {
  const auto idx = descending(data);
  std::vector<Step> steps;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (data.labels[idx[i]]) ++tp; else ++fp;
    const bool group_end =
        i + 1 == idx.size() || data.scores[idx[i + 1]] != data.scores[idx[i]];
    if (group_end) steps.push_back({data.scores[idx[i]], tp, fp});
  }
  return steps;
}

}  // namespace

double roc_auc(const ScoredLabels& data) {
  require_both_classes(data, "ROC-AUC");
  const std::size_t n = data.scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return data.scores[a] < data.scores[b]; });
  // Mann-Whitney: tied values share the average rank (half-integers, exact).
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && data.scores[idx[j]] == data.scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (data.labels[idx[k]]) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(data.positives());
  const double q = static_cast<double>(data.negatives());
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

RocCurve roc_curve(const ScoredLabels& data) {
  require_both_classes(data, "ROC curve");
  const double p = static_cast<double>(data.positives());
  const double q = static_cast<double>(data.negatives());
  RocCurve c;
  c.fpr.push_back(0.0);
  c.tpr.push_back(0.0);
  for (const auto& s : threshold_steps(data)) {
    c.fpr.push_back(static_cast<double>(s.fp) / q);
    c.tpr.push_back(static_cast<double>(s.tp) / p);
    c.thresholds.push_back(s.score);
  }
  // Trapezoid over the tie-grouped points equals the rank-sum value; the
  // latter is exact, so report it.
  c.auc = roc_auc(data);
  return c;
}

PrCurve pr_curve(const ScoredLabels& data) {
  data.validate();
  const std::size_t positives = data.positives();
  if (positives == 0) throw UndefinedMetricError("PR curve needs at least one positive label");
  PrCurve c;
  double prev_recall = 0.0;
  for (const auto& s : threshold_steps(data)) {
    const double recall = static_cast<double>(s.tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    c.ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    c.recall.push_back(recall);
    c.precision.push_back(precision);
    c.thresholds.push_back(s.score);
  }
  return c;
}

YoudenResult youden_threshold(const ScoredLabels& data) {
  require_both_classes(data, "Youden's J");
  const double p = static_cast<double>(data.positives());
  const double q = static_cast<double>(data.negatives());
  const auto steps = threshold_steps(data);

  // Flag nothing: threshold at the top score, J = 0. Walking down, cut i
  // flags every group up to and including steps[i]; its threshold sits in
  // the gap to the next lower score. Strict > keeps ties at the higher cut.
  // J is compared as the exact integer tp*N - fp*P so that cuts with equal J
  // tie exactly instead of by rounding.
  YoudenResult best;
  best.threshold = steps.front().score;
  const auto pi = static_cast<long long>(data.positives());
  const auto qi = static_cast<long long>(data.negatives());
  long long best_key = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const long long key = static_cast<long long>(steps[i].tp) * qi -
                          static_cast<long long>(steps[i].fp) * pi;
    const double tpr = static_cast<double>(steps[i].tp) / p;
    const double fpr = static_cast<double>(steps[i].fp) / q;
    const double j = tpr - fpr;
    if (key > best_key) {
      best_key = key;
      double theta;
      if (i + 1 < steps.size()) {
        const double hi = steps[i].score, lo = steps[i + 1].score;
        theta = lo + 0.5 * (hi - lo);
        if (!(theta < hi)) theta = lo;  // adjacent doubles
      } else {
        theta = std::nextafter(steps[i].score, -INFINITY);
      }
      best = {theta, j, tpr, fpr};
    }
  }
  return best;
}

std::optional<double> ConfusionMatrix::precision() const {
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::optional<double> ConfusionMatrix::recall() const {
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> ConfusionMatrix::fpr() const {
  if (fp + tn == 0) return std::nullopt;
  return static_cast<double>(fp) / static_cast<double>(fp + tn);
}

std::optional<double> ConfusionMatrix::f1() const {
  const auto p = precision(), r = recall();
  if (!p || !r || *p + *r == 0.0) return std::nullopt;
  return 2.0 * *p * *r / (*p + *r);
}

ConfusionMatrix confusion_at(const ScoredLabels& data, double threshold) {
  data.validate();
  ConfusionMatrix m;
  for (std::size_t i = 0; i < data.scores.size(); ++i) {
    const bool flag = data.scores[i] > threshold;
    const bool pos = data.labels[i] != 0;
    if (flag && pos) ++m.tp;
    else if (flag) ++m.fp;
    else if (pos) ++m.fn;
    else ++m.tn;
  }
  return m;
}

// ---------------------------------------------------------------------------
// PCA

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_matrix(const std::vector<double>& rows, std::size_t dim) {
  if (dim == 0) throw ConfigError("PCA: zero dimension");
  if (rows.size() % dim != 0) throw ShapeError("PCA: ragged row matrix");
  return {rows.data(), static_cast<Eigen::Index>(rows.size() / dim),
          static_cast<Eigen::Index>(dim)};
}

}  // namespace

PcaModel fit_pca(const std::vector<double>& rows, std::size_t dim, std::size_t n_components,
                 double variance_target) {
  if (n_components >= dim)
    throw ConfigError(fmt::format("PCA: n_components {} must be below the dimension {}",
                                  n_components, dim));
  if (!(variance_target > 0.0 && variance_target <= 1.0))
    throw ConfigError("PCA: variance target must lie in (0, 1]");
  const auto x = as_matrix(rows, dim);
  const Eigen::Index n = x.rows();
  if (n < 2) throw DataError("PCA: need at least two training rows");

  PcaModel pca;
  pca.dim = dim;
  const Eigen::RowVectorXd mu = x.colwise().mean();
  pca.mean.assign(mu.data(), mu.data() + dim);
  const Eigen::MatrixXd xc = x.rowwise() - mu;

  // Eigen-decompose whichever of the covariance (dim x dim) or the Gram
  // matrix (n x n) is smaller; they share the non-zero spectrum.
  Eigen::VectorXd evals;
  Eigen::MatrixXd evecs;  // columns are unit directions in feature space
  const double inv_n = 1.0 / static_cast<double>(n);
  if (static_cast<std::size_t>(n) < dim) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((xc * xc.transpose()) * inv_n);
    evals = es.eigenvalues();
    evecs = xc.transpose() * es.eigenvectors();
    for (Eigen::Index k = 0; k < evecs.cols(); ++k) {
      const double norm = evecs.col(k).norm();
      if (norm > 0) evecs.col(k) /= norm;
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((xc.transpose() * xc) * inv_n);
    evals = es.eigenvalues();
    evecs = es.eigenvectors();
  }

  // Ascending from the solver; walk from the top.
  const Eigen::Index m = evals.size();
  double total = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) total += std::max(0.0, evals[k]);
  std::size_t keep = n_components;
  if (keep == 0) {
    double acc = 0.0;
    for (Eigen::Index k = m - 1; k >= 0; --k) {
      acc += std::max(0.0, evals[k]);
      ++keep;
      if (total <= 0.0 || acc >= variance_target * total) break;
    }
  }
  if (keep > static_cast<std::size_t>(m))
    throw ConfigError(fmt::format("PCA: {} components requested but only {} available", keep, m));
  for (std::size_t k = 0; k < keep; ++k) {
    const Eigen::Index c = m - 1 - static_cast<Eigen::Index>(k);
    pca.eigenvalues.push_back(evals[c]);
    pca.components.emplace_back(evecs.col(c).data(), evecs.col(c).data() + dim);
  }
  return pca;
}

std::vector<double> pca_scores(const PcaModel& pca, const std::vector<double>& rows) {
  const auto x = as_matrix(rows, pca.dim);
  const Eigen::Index d = static_cast<Eigen::Index>(pca.dim);
  const Eigen::Index k = static_cast<Eigen::Index>(pca.components.size());
  Eigen::MatrixXd v(d, k);
  for (Eigen::Index c = 0; c < k; ++c)
    v.col(c) = Eigen::Map<const Eigen::VectorXd>(pca.components[c].data(), d);
  const Eigen::Map<const Eigen::RowVectorXd> mu(pca.mean.data(), d);
  const Eigen::MatrixXd xc = x.rowwise() - mu;
  const Eigen::MatrixXd resid = xc - (xc * v) * v.transpose();
  const Eigen::VectorXd err = resid.rowwise().squaredNorm();
  return {err.data(), err.data() + err.size()};
}

std::vector<double> pca_baseline(const std::vector<double>& train_rows,
                                 const std::vector<double>& test_rows, std::size_t dim,
                                 std::size_t n_components, double variance_target) {
  return pca_scores(fit_pca(train_rows, dim, n_components, variance_target), test_rows);
}

// ---------------------------------------------------------------------------

ScoredLabels frame_level(const std::vector<std::size_t>& window_starts,
                         const std::vector<double>& window_scores, std::size_t window_len,
                         const std::vector<std::uint8_t>& frame_labels,
                         std::vector<std::size_t>* frame_index) {
  if (window_starts.size() != window_scores.size())
    throw ShapeError("frame_level: starts and scores differ in length");
  const std::size_t frames = frame_labels.size();
  std::vector<double> score(frames, 0.0);
  std::vector<bool> covered(frames, false);
  std::size_t prev = 0;
  for (std::size_t i = 0; i < window_starts.size(); ++i) {
    const std::size_t s = window_starts[i];
    if (i > 0 && s < prev) throw DataError("frame_level: window starts must be non-decreasing");
    prev = s;
    if (s + window_len > frames) throw DataError("frame_level: window runs past the last frame");
    for (std::size_t f = s; f < s + window_len; ++f) {
      score[f] = window_scores[i];
      covered[f] = true;
    }
  }
  ScoredLabels out;
  if (frame_index) frame_index->clear();
  for (std::size_t f = 0; f < frames; ++f)
    if (covered[f]) {
      out.scores.push_back(score[f]);
      out.labels.push_back(frame_labels[f] ? 1 : 0);
      if (frame_index) frame_index->push_back(f);
    }
  return out;
}

nlohmann::json EvaluationReport::to_json() const {
  auto opt = [](std::optional<double> v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"level", level},
          {"auc", auc},
          {"ap", ap},
          {"threshold", threshold},
          {"precision", opt(confusion.precision())},
          {"recall", opt(confusion.recall())},
          {"fpr", opt(confusion.fpr())},
          {"f1", opt(confusion.f1())},
          {"confusion",
           {{"tp", confusion.tp}, {"fp", confusion.fp}, {"tn", confusion.tn}, {"fn", confusion.fn}}}};
}

EvaluationReport evaluate_split(const ScoredLabels& validation, const ScoredLabels& test,
                                const std::string& level) {
  EvaluationReport r;
  r.level = level;
  r.threshold = youden_threshold(validation).threshold;
  r.auc = roc_auc(test);
  r.ap = pr_curve(test).ap;
  r.confusion = confusion_at(test, r.threshold);
  return r;
}

std::string format_roc_csv(const RocCurve& curve) {
  std::ostringstream out;
  out << "fpr,tpr,threshold\n";
  for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
    out << format_double(curve.fpr[i]) << ',' << format_double(curve.tpr[i]) << ',';
    if (i > 0) out << format_double(curve.thresholds[i - 1]);
    out << '\n';
  }
  return out.str();
}

std::string format_pr_csv(const PrCurve& curve) {
  std::ostringstream out;
  out << "recall,precision,threshold\n";
  for (std::size_t i = 0; i < curve.recall.size(); ++i)
    out << format_double(curve.recall[i]) << ',' << format_double(curve.precision[i]) << ','
        << format_double(curve.thresholds[i]) << '\n';
  return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
  if (!f) throw DataError("failed writing " + path);
}

}  // namespace tbigan
