#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace attnct::metrics {

struct ScoredSample {
  int label = 0;  // 1 = positive (COVID)
  double score = 0.0;
};

/// Pairs labels with scores; sizes must agree, labels must be 0/1, and scores
/// finite in [0, 1].
std::vector<ScoredSample> zip_scores(const std::vector<int>& labels, const std::vector<double>& scores);

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// A sample is predicted positive iff score > threshold.
ConfusionMatrix confusion_at(const std::vector<ScoredSample>& samples, double threshold);

// Zero denominators give std::nullopt.
std::optional<double> sensitivity(const ConfusionMatrix& cm);
std::optional<double> specificity(const ConfusionMatrix& cm);
std::optional<double> precision(const ConfusionMatrix& cm);
std::optional<double> f1(const ConfusionMatrix& cm);
std::optional<double> accuracy(const ConfusionMatrix& cm);

/// Fixed-point rendering; undefined values print as an em dash.
std::string format_metric(const std::optional<double>& v, int digits = 4);

struct SweepRow {
  double threshold = 0.0;
  ConfusionMatrix cm;
  std::optional<double> sensitivity, specificity, f1;
};

/// 0.1, 0.2, ..., 0.9.
std::vector<double> default_threshold_grid();
std::vector<SweepRow> threshold_sweep(const std::vector<ScoredSample>& samples, const std::vector<double>& thresholds);

struct CurvePoint {
  /// Operating point that predicts positive for scores >= threshold; the
  /// leading (0, 0) point carries +infinity.
  double threshold = 0.0;
  double x = 0.0;  // fpr for ROC, recall for PR
  double y = 0.0;  // tpr for ROC, precision for PR
};

struct RocCurve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
};

/// One point per distinct score (descending) after the (0, 0) origin. Tied
/// scores form a single step, so the trapezoidal area equals the tie-aware
/// Mann-Whitney statistic.
RocCurve roc_curve(const std::vector<ScoredSample>& samples);

/// Precision and recall at every distinct score, descending; ends at recall 1.
std::vector<CurvePoint> pr_curve(const std::vector<ScoredSample>& samples);

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
};

/// Equal-width bins over [0, 1] for the samples of one class; the last bin is
/// closed on the right.
std::vector<HistogramBin> score_histogram(const std::vector<ScoredSample>& samples, int label, std::size_t bins);

}  // namespace attnct::metrics
