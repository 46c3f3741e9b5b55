#include "attnct/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <sstream>
#include <tuple>

#include "attnct/errors.hpp"
#include "attnct/kv.hpp"

namespace attnct::report {
namespace {

constexpr double kWidth = 800, kHeight = 600;
constexpr double kLeft = 80, kRight = 30, kTop = 50, kBottom = 70;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fixed(*v) : ""; }

std::string threshold_text(double t) { return std::isinf(t) ? "inf" : kv::format_double(t); }

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Code points, so multi-byte symbols pad like single characters.
std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

struct Frame {
  double x0, x1, y0, y1;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

void open_chart(std::ostringstream& svg, const Frame& f, const ChartSpec& spec) {
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 600\" width=\"800\" height=\"600\" "
         "font-family=\"sans-serif\">\n"
      << "<rect width=\"800\" height=\"600\" fill=\"#ffffff\"/>\n"
      << "<text x=\"400\" y=\"28\" font-size=\"18\" text-anchor=\"middle\">" << escape_xml(spec.title) << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 5.0, yv = f.y0 + (f.y1 - f.y0) * i / 5.0;
    const double x = f.px(xv), y = f.py(yv);
    svg << "<line x1=\"" << fixed(x, 2) << "\" y1=\"" << kTop << "\" x2=\"" << fixed(x, 2) << "\" y2=\""
        << kHeight - kBottom << "\" stroke=\"#e0e0e0\"/>\n"
        << "<line x1=\"" << kLeft << "\" y1=\"" << fixed(y, 2) << "\" x2=\"" << kWidth - kRight << "\" y2=\""
        << fixed(y, 2) << "\" stroke=\"#e0e0e0\"/>\n"
        << "<text x=\"" << fixed(x, 2) << "\" y=\"" << kHeight - kBottom + 20
        << "\" font-size=\"12\" text-anchor=\"middle\">" << tick_label(xv) << "</text>\n"
        << "<text x=\"" << kLeft - 8 << "\" y=\"" << fixed(y + 4, 2) << "\" font-size=\"12\" text-anchor=\"end\">"
        << tick_label(yv) << "</text>\n";
  }
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
      << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"#333333\"/>\n"
      << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 20
      << "\" font-size=\"14\" text-anchor=\"middle\">" << escape_xml(spec.x_label) << "</text>\n"
      << "<text x=\"20\" y=\"" << (kTop + kHeight - kBottom) / 2 << "\" font-size=\"14\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 20 " << (kTop + kHeight - kBottom) / 2 << ")\">" << escape_xml(spec.y_label)
      << "</text>\n";
}

}  // namespace

std::string sweep_csv(const std::vector<metrics::SweepRow>& rows) {
  std::string out = "threshold,sens,spec,f1,tp,fp,tn,fn\n";
  for (const auto& r : rows) {
    out += kv::format_double(r.threshold) + "," + opt(r.sensitivity) + "," + opt(r.specificity) + "," + opt(r.f1) +
           "," + std::to_string(r.cm.tp) + "," + std::to_string(r.cm.fp) + "," + std::to_string(r.cm.tn) + "," +
           std::to_string(r.cm.fn) + "\n";
  }
  return out;
}

std::string roc_csv(const metrics::RocCurve& roc) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : roc.points) out += threshold_text(p.threshold) + "," + fixed(p.x) + "," + fixed(p.y) + "\n";
  return out;
}

std::string pr_csv(const std::vector<metrics::CurvePoint>& points) {
  std::string out = "threshold,recall,precision\n";
  for (const auto& p : points) out += threshold_text(p.threshold) + "," + fixed(p.x) + "," + fixed(p.y) + "\n";
  return out;
}

std::string hist_csv(const std::vector<metrics::HistogramBin>& bins) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (const auto& b : bins) out += fixed(b.lo) + "," + fixed(b.hi) + "," + std::to_string(b.count) + "\n";
  return out;
}

std::string scores_csv(const std::vector<std::string>& ids, const std::vector<int>& labels,
                       const std::vector<double>& scores) {
  if (ids.size() != labels.size() || ids.size() != scores.size()) {
    throw InputError("scores_csv: ids, labels, and scores differ in length");
  }
  std::string out = "id,label,score\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].find_first_of(",\n") != std::string::npos) {
      throw InputError("scores_csv: sample id `" + ids[i] + "` contains a comma or newline");
    }
    out += ids[i] + "," + std::to_string(labels[i]) + "," + kv::format_double(scores[i]) + "\n";
  }
  return out;
}

std::string confusion_csv(const metrics::ConfusionMatrix& cm) {
  return "actual,predicted_positive,predicted_negative\npositive," + std::to_string(cm.tp) + "," +
         std::to_string(cm.fn) + "\nnegative," + std::to_string(cm.fp) + "," + std::to_string(cm.tn) + "\n";
}

std::string sweep_results_csv(const std::vector<train::SweepResult>& results) {
  std::string out =
      "loss,optimizer,learning_rate,repeats,val_accuracy_mean,val_accuracy_stderr,test_accuracy_mean,"
      "test_accuracy_stderr\n";
  for (const auto& r : results) {
    out += "binary_cross_entropy," + train::to_string(r.optimizer.kind) + "," +
           kv::format_double(r.optimizer.learning_rate) + "," + std::to_string(r.val_accuracy.size()) + "," +
           fixed(r.val_mean) + "," + opt(r.val_stderr) + "," + opt(r.test_mean) + "," + opt(r.test_stderr) + "\n";
  }
  return out;
}

std::string sweep_results_table(const std::vector<train::SweepResult>& results) {
  const bool has_test = std::any_of(results.begin(), results.end(), [](const auto& r) { return r.test_mean.has_value(); });
  auto pm = [](const std::optional<double>& m, const std::optional<double>& se) {
    return metrics::format_metric(m, 3) + " ± " + metrics::format_metric(se, 3);
  };
  std::vector<std::vector<std::string>> rows{{"Loss", "Optimizer", "Learning rate", "Accuracy (val)"}};
  if (has_test) rows[0].push_back("Accuracy (test)");
  for (const auto& r : results) {
    rows.push_back({"binary cross-entropy", train::to_string(r.optimizer.kind),
                    kv::format_double(r.optimizer.learning_rate), pm(r.val_mean, r.val_stderr)});
    if (has_test) rows.back().push_back(pm(r.test_mean, r.test_stderr));
  }
  std::vector<std::size_t> widths(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], display_width(row[c]));
  std::string os;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os += row[c];
      if (c + 1 < row.size()) os += std::string(widths[c] - display_width(row[c]) + 2, ' ');
    }
    os += "\n";
  }
  const std::size_t repeats = results.empty() ? 0 : results.front().val_accuracy.size();
  os += "± is the standard error of the mean over " + std::to_string(repeats) + " repeat seed" +
        (repeats == 1 ? "" : "s") + "; — marks an undefined value.\n";
  return os;
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw LookupError("csv: no column `" + name + "`");
  return static_cast<std::size_t>(it - header.begin());
}

std::optional<double> CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& cell = rows.at(row).at(col);
  if (cell.empty()) return std::nullopt;
  if (cell == "inf") return HUGE_VAL;
  return kv::parse_double("csv cell", cell);
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size()) {
        throw InputError("csv line " + std::to_string(n) + ": expected " + std::to_string(t.header.size()) +
                         " fields, got " + std::to_string(cells.size()));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw InputError("csv: missing header");
  return t;
}

std::string line_chart_svg(const std::string& csv, const std::string& x_column, const std::vector<Series>& series,
                           const ChartSpec& spec) {
  const CsvTable t = parse_csv(csv);
  const std::size_t xc = t.column(x_column);
  std::vector<std::size_t> cols;
  for (const auto& s : series) cols.push_back(t.column(s.column));

  double x0 = 0.0, x1 = 1.0;
  if (spec.x_range) {
    std::tie(x0, x1) = *spec.x_range;
  } else {
    bool any = false;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto x = t.number(r, xc);
      if (!x || !std::isfinite(*x)) continue;
      x0 = any ? std::min(x0, *x) : *x;
      x1 = any ? std::max(x1, *x) : *x;
      any = true;
    }
    if (x1 <= x0) x1 = x0 + 1.0;
  }
  const Frame f{x0, x1, spec.y_range.first, spec.y_range.second};

  std::ostringstream svg;
  open_chart(svg, f, spec);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kPalette[s % std::size(kPalette)];
    std::vector<std::string> segments(1);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto x = t.number(r, xc);
      const auto y = t.number(r, cols[s]);
      if (!x || !y || !std::isfinite(*x) || !std::isfinite(*y)) {
        if (!segments.back().empty()) segments.emplace_back();
        continue;
      }
      segments.back() += fixed(f.px(*x), 2) + "," + fixed(f.py(*y), 2) + " ";
    }
    for (const auto& pts : segments) {
      if (pts.empty()) continue;
      svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    }
    const double ly = kTop + 20 + 20.0 * static_cast<double>(s);
    svg << "<line x1=\"" << kWidth - kRight - 190 << "\" y1=\"" << ly << "\" x2=\"" << kWidth - kRight - 165
        << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << kWidth - kRight - 158 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
        << escape_xml(series[s].label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string histogram_svg(const std::string& csv, const ChartSpec& spec) {
  const CsvTable t = parse_csv(csv);
  const std::size_t lo = t.column("bin_lo"), hi = t.column("bin_hi"), count = t.column("count");
  double peak = 1.0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) peak = std::max(peak, t.number(r, count).value_or(0.0));
  const Frame f{0.0, 1.0, 0.0, peak};

  std::ostringstream svg;
  open_chart(svg, f, spec);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double a = f.px(t.number(r, lo).value_or(0.0)), b = f.px(t.number(r, hi).value_or(0.0));
    const double top = f.py(t.number(r, count).value_or(0.0)), base = f.py(0.0);
    svg << "<rect x=\"" << fixed(a + 1, 2) << "\" y=\"" << fixed(top, 2) << "\" width=\""
        << fixed(std::max(0.0, b - a - 2), 2) << "\" height=\"" << fixed(base - top, 2) << "\" fill=\"" << kPalette[0]
        << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

Summary summarize(const std::vector<metrics::ScoredSample>& samples, double threshold) {
  Summary s;
  s.threshold = threshold;
  s.cm = metrics::confusion_at(samples, threshold);
  s.positives = s.cm.tp + s.cm.fn;
  s.negatives = s.cm.tn + s.cm.fp;
  s.auc = metrics::roc_curve(samples).auc;
  return s;
}

std::string summary_text(const Summary& s) {
  std::ostringstream os;
  os << "samples      " << s.positives + s.negatives << " (" << s.positives << " positive, " << s.negatives
     << " negative)\n"
     << "threshold    " << kv::format_double(s.threshold) << " (positive iff score > threshold)\n"
     << "confusion    tp=" << s.cm.tp << " fp=" << s.cm.fp << " tn=" << s.cm.tn << " fn=" << s.cm.fn << "\n"
     << "sensitivity  " << metrics::format_metric(metrics::sensitivity(s.cm)) << "\n"
     << "specificity  " << metrics::format_metric(metrics::specificity(s.cm)) << "\n"
     << "precision    " << metrics::format_metric(metrics::precision(s.cm)) << "\n"
     << "f1           " << metrics::format_metric(metrics::f1(s.cm)) << "\n"
     << "accuracy     " << metrics::format_metric(metrics::accuracy(s.cm)) << "\n"
     << "auc          " << metrics::format_metric(s.auc) << "\n";
  return os.str();
}

}  // namespace attnct::report
