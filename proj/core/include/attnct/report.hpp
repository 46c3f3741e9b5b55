#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "attnct/metrics.hpp"
#include "attnct/train.hpp"

namespace attnct::report {

// CSV writers. Undefined metrics are written as empty fields.

/// `threshold,sens,spec,f1,tp,fp,tn,fn`
std::string sweep_csv(const std::vector<metrics::SweepRow>& rows);
/// `threshold,fpr,tpr`; the origin row carries `inf`.
std::string roc_csv(const metrics::RocCurve& roc);
/// `threshold,recall,precision`
std::string pr_csv(const std::vector<metrics::CurvePoint>& points);
/// `bin_lo,bin_hi,count`
std::string hist_csv(const std::vector<metrics::HistogramBin>& bins);
/// `id,label,score`
std::string scores_csv(const std::vector<std::string>& ids, const std::vector<int>& labels,
                       const std::vector<double>& scores);
/// `actual,predicted_positive,predicted_negative`
std::string confusion_csv(const metrics::ConfusionMatrix& cm);
/// `loss,optimizer,learning_rate,repeats,val_accuracy_mean,val_accuracy_stderr,test_accuracy_mean,test_accuracy_stderr`
std::string sweep_results_csv(const std::vector<train::SweepResult>& results);

/// Fixed-width table with Loss | Optimizer | Learning rate | Accuracy columns,
/// accuracy shown as mean ± standard error over the repeat seeds.
std::string sweep_results_table(const std::vector<train::SweepResult>& results);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Throws LookupError for a missing column.
  std::size_t column(const std::string& name) const;
  /// Numeric cell; std::nullopt for an empty field.
  std::optional<double> number(std::size_t row, std::size_t col) const;
};

/// Splits plain comma-separated text (no quoting) with a header row.
CsvTable parse_csv(const std::string& text);

struct Series {
  std::string column;
  std::string label;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::optional<std::pair<double, double>> x_range;  // data extent when unset
  std::pair<double, double> y_range{0.0, 1.0};
};

/// 800 x 600 polyline chart of `series` against `x_column`; empty cells
/// break the line.
std::string line_chart_svg(const std::string& csv, const std::string& x_column, const std::vector<Series>& series,
                           const ChartSpec& spec);
/// 800 x 600 bar chart from `bin_lo,bin_hi,count` rows; y spans 0 to the
/// largest count.
std::string histogram_svg(const std::string& csv, const ChartSpec& spec);

struct Summary {
  double threshold = 0.5;
  metrics::ConfusionMatrix cm;
  double auc = 0.0;
  std::size_t positives = 0, negatives = 0;
};

Summary summarize(const std::vector<metrics::ScoredSample>& samples, double threshold);
/// Plain-text block: counts, confusion matrix, sensitivity, specificity,
/// precision, F1, accuracy, AUC.
std::string summary_text(const Summary& s);

}  // namespace attnct::report
