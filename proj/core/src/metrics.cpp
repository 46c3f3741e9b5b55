#include "attnct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "attnct/errors.hpp"

namespace attnct::metrics {
namespace {

void require_nonempty(const std::vector<ScoredSample>& s, const char* what) {
  if (s.empty()) throw InputError(std::string(what) + ": no samples");
}

void require_valid(const ScoredSample& s) {
  if (s.label != 0 && s.label != 1) throw InputError("label must be 0 or 1, got " + std::to_string(s.label));
  if (!std::isfinite(s.score)) throw InputError("score is not finite");
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

// Counts positives and negatives at or above each distinct score, descending.
struct Step {
  double score;
  std::size_t tp, fp;
};

std::vector<Step> descending_steps(const std::vector<ScoredSample>& samples) {
  std::vector<ScoredSample> sorted = samples;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<Step> steps;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double s = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == s; ++i) (sorted[i].label == 1 ? tp : fp) += 1;
    steps.push_back({s, tp, fp});
  }
  return steps;
}

}  // namespace

std::vector<ScoredSample> zip_scores(const std::vector<int>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size()) {
    throw DimensionError("zip_scores: " + std::to_string(labels.size()) + " labels but " +
                         std::to_string(scores.size()) + " scores");
  }
  std::vector<ScoredSample> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = {labels[i], scores[i]};
    require_valid(out[i]);
    if (scores[i] < 0.0 || scores[i] > 1.0) throw InputError("score outside [0, 1]: " + std::to_string(scores[i]));
  }
  return out;
}

ConfusionMatrix confusion_at(const std::vector<ScoredSample>& samples, double threshold) {
  require_nonempty(samples, "confusion_at");
  ConfusionMatrix cm;
  for (const auto& s : samples) {
    require_valid(s);
    const bool predicted = s.score > threshold;
    if (s.label == 1) {
      (predicted ? cm.tp : cm.fn) += 1;
    } else {
      (predicted ? cm.fp : cm.tn) += 1;
    }
  }
  return cm;
}

std::optional<double> sensitivity(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fn); }
std::optional<double> specificity(const ConfusionMatrix& cm) { return ratio(cm.tn, cm.tn + cm.fp); }
std::optional<double> precision(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fp); }
std::optional<double> accuracy(const ConfusionMatrix& cm) { return ratio(cm.tp + cm.tn, cm.total()); }

std::optional<double> f1(const ConfusionMatrix& cm) {
  // 2PR / (P + R) reduces to 2TP / (2TP + FP + FN).
  return ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn);
}

std::string format_metric(const std::optional<double>& v, int digits) {
  if (!v) return "—";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
  return buf;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 9; ++k) g.push_back(k / 10.0);
  return g;
}

std::vector<SweepRow> threshold_sweep(const std::vector<ScoredSample>& samples, const std::vector<double>& thresholds) {
  require_nonempty(samples, "threshold_sweep");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw InputError("threshold_sweep: thresholds must be sorted ascending");
  }
  std::vector<SweepRow> rows;
  rows.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto cm = confusion_at(samples, t);
    rows.push_back({t, cm, sensitivity(cm), specificity(cm), f1(cm)});
  }
  return rows;
}

RocCurve roc_curve(const std::vector<ScoredSample>& samples) {
  require_nonempty(samples, "roc_curve");
  std::size_t pos = 0;
  for (const auto& s : samples) {
    require_valid(s);
    pos += s.label == 1 ? 1 : 0;
  }
  const std::size_t neg = samples.size() - pos;
  if (pos == 0 || neg == 0) throw InputError("roc_curve: both classes must be present");

  RocCurve roc;
  roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  // Twice the area in units of one positive-negative pair, kept integral.
  unsigned long long twice_area = 0;
  std::size_t prev_tp = 0, prev_fp = 0;
  for (const auto& st : descending_steps(samples)) {
    twice_area += static_cast<unsigned long long>(st.fp - prev_fp) * (st.tp + prev_tp);
    roc.points.push_back({st.score, static_cast<double>(st.fp) / static_cast<double>(neg),
                          static_cast<double>(st.tp) / static_cast<double>(pos)});
    prev_tp = st.tp;
    prev_fp = st.fp;
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

std::vector<CurvePoint> pr_curve(const std::vector<ScoredSample>& samples) {
  require_nonempty(samples, "pr_curve");
  std::size_t pos = 0;
  for (const auto& s : samples) {
    require_valid(s);
    pos += s.label == 1 ? 1 : 0;
  }
  if (pos == 0) throw InputError("pr_curve: no positive samples");
  std::vector<CurvePoint> pts;
  for (const auto& st : descending_steps(samples)) {
    pts.push_back({st.score, static_cast<double>(st.tp) / static_cast<double>(pos),
                   static_cast<double>(st.tp) / static_cast<double>(st.tp + st.fp)});
  }
  return pts;
}

std::vector<HistogramBin> score_histogram(const std::vector<ScoredSample>& samples, int label, std::size_t bins) {
  if (bins == 0) throw InputError("score_histogram: bins must be at least 1");
  std::vector<HistogramBin> h(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    h[b].lo = static_cast<double>(b) / static_cast<double>(bins);
    h[b].hi = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  for (const auto& s : samples) {
    require_valid(s);
    if (s.label != label) continue;
    if (s.score < 0.0 || s.score > 1.0) throw InputError("score_histogram: score outside [0, 1]");
    const auto b = std::min(bins - 1, static_cast<std::size_t>(std::floor(s.score * static_cast<double>(bins))));
    h[b].count += 1;
  }
  return h;
}

}  // namespace attnct::metrics
