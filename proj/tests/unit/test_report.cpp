#include <algorithm>
#include <cmath>
#include <regex>

#include "attnct/errors.hpp"
#include "attnct/kv.hpp"
#include "attnct/report.hpp"
#include "doctest.h"

using namespace attnct;
using namespace attnct::report;

namespace {

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("key=value text") {
  TEST_CASE("comments, blanks, and trimming") {
    const auto lines = kv::parse_text("# header\n\n  train.lr = 0.01 \nseed=3\n", "cfg");
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].key == "train.lr");
    CHECK(lines[0].value == "0.01");
    CHECK(lines[0].line == 3);
    CHECK(lines[1].line == 4);
  }

  TEST_CASE("errors carry the line number") {
    try {
      kv::parse_text("a=1\n\nno equals sign\n", "run.cfg");
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("run.cfg:3") != std::string::npos);
    }
    CHECK_THROWS_AS(kv::parse_text("a=1\na=2\n"), ConfigError);
    CHECK_THROWS_AS(kv::parse_text("=2\n"), ConfigError);
  }

  TEST_CASE("value parsers") {
    CHECK(kv::parse_size("k", "12") == 12);
    CHECK_THROWS_AS(kv::parse_size("k", "0"), ConfigError);
    CHECK(kv::parse_size("k", "0", true) == 0);
    CHECK_THROWS_AS(kv::parse_size("k", "3x"), ConfigError);
    CHECK(kv::parse_u64("k", "18446744073709551615") == 18446744073709551615ull);
    CHECK_THROWS_AS(kv::parse_u64("k", "-1"), ConfigError);
    CHECK(kv::parse_sizes("k", "16,32, 64") == std::vector<std::size_t>{16, 32, 64});
    CHECK(kv::parse_doubles("k", "0.1,0.5") == std::vector<double>{0.1, 0.5});
    CHECK_THROWS_AS(kv::parse_double("k", "nan"), ConfigError);
    CHECK(kv::parse_bool("k", "on"));
    CHECK_THROWS_AS(kv::parse_bool("k", "yes"), ConfigError);
  }

  TEST_CASE("doubles format to the shortest round-trip text") {
    CHECK(kv::format_double(0.01) == "0.01");
    CHECK(kv::format_double(1e-8) == "1e-08");
    for (double v : {0.1, 1.0 / 3.0, 123456.789, 2.5e-300}) CHECK(std::stod(kv::format_double(v)) == v);
  }
}

TEST_SUITE("report csv") {
  TEST_CASE("sweep rows keep counts and blank undefined metrics") {
    metrics::SweepRow r;
    r.threshold = 0.5;
    r.cm = {3, 0, 0, 1};
    r.sensitivity = 0.75;
    r.f1 = 6.0 / 7.0;
    const std::string csv = sweep_csv({r});
    CHECK(csv == "threshold,sens,spec,f1,tp,fp,tn,fn\n0.5,0.750000,,0.857143,3,0,0,1\n");
  }

  TEST_CASE("roc origin threshold is written as inf and parsed back") {
    metrics::RocCurve roc;
    roc.points = {{HUGE_VAL, 0, 0}, {0.7, 0.5, 1}, {0.2, 1, 1}};
    const CsvTable t = parse_csv(roc_csv(roc));
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0][0] == "inf");
    CHECK(std::isinf(*t.number(0, t.column("threshold"))));
    CHECK(*t.number(1, t.column("fpr")) == 0.5);
  }

  TEST_CASE("scores csv round trip") {
    const std::vector<double> scores{0.1, 0.123456789012345, 1.0};
    const CsvTable t = parse_csv(scores_csv({"a.pgm", "b.pgm", "c.pgm"}, {0, 1, 1}, scores));
    for (std::size_t i = 0; i < 3; ++i) CHECK(*t.number(i, t.column("score")) == scores[i]);
    CHECK_THROWS_AS(scores_csv({"a,b"}, {0}, {0.5}), InputError);
    CHECK_THROWS_AS(scores_csv({"a"}, {0, 1}, {0.5}), InputError);
  }

  TEST_CASE("histogram and confusion layouts") {
    const std::string h = hist_csv({{0.0, 0.5, 2}, {0.5, 1.0, 3}});
    CHECK(h == "bin_lo,bin_hi,count\n0.000000,0.500000,2\n0.500000,1.000000,3\n");
    CHECK(confusion_csv({5, 1, 7, 2}) ==
          "actual,predicted_positive,predicted_negative\npositive,5,2\nnegative,1,7\n");
  }

  TEST_CASE("parse errors") {
    CHECK_THROWS_AS(parse_csv(""), InputError);
    CHECK_THROWS_AS(parse_csv("a,b\n1\n"), InputError);
    CHECK_THROWS_AS(parse_csv("a,b\n1,2\n").column("c"), LookupError);
  }

  TEST_CASE("sweep table marks undefined stderr") {
    train::SweepResult r;
    r.optimizer.kind = train::OptimizerKind::adam;
    r.optimizer.learning_rate = 0.001;
    r.val_accuracy = {0.9};
    r.val_mean = 0.9;
    const std::string table = sweep_results_table({r});
    CHECK(table.find("adam") != std::string::npos);
    CHECK(table.find("0.900 ± —") != std::string::npos);
    CHECK(table.find("Accuracy (test)") == std::string::npos);
    const CsvTable t = parse_csv(sweep_results_csv({r}));
    CHECK(t.rows[0][t.column("val_accuracy_stderr")].empty());
    CHECK(t.rows[0][t.column("learning_rate")] == "0.001");
  }
}

TEST_SUITE("report svg") {
  TEST_CASE("line chart has the fixed viewBox and one polyline per unbroken run") {
    const std::string csv = "x,a,b\n0,0.1,0.5\n1,0.2,\n2,0.3,0.7\n3,0.4,0.8\n";
    const std::string svg = line_chart_svg(csv, "x", {{"a", "A"}, {"b", "B"}}, {"t", "x", "y"});
    CHECK(svg.find("viewBox=\"0 0 800 600\"") != std::string::npos);
    CHECK(count(svg, "<polyline") == 3);
    CHECK(svg.find(">A</text>") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
  }

  TEST_CASE("chart coordinates follow the csv values") {
    const std::string svg = line_chart_svg("x,y\n0,0\n1,1\n", "x", {{"y", "y"}}, {"t", "x", "y", std::pair{0.0, 1.0}});
    // Plot area spans x 80..770 and y 530..50.
    CHECK(svg.find("points=\"80.00,530.00 770.00,50.00 \"") != std::string::npos);
  }

  TEST_CASE("histogram draws one bar per bin") {
    const std::string svg = histogram_svg("bin_lo,bin_hi,count\n0,0.5,4\n0.5,1,2\n", {"h", "score", "count"});
    const std::regex bar("<rect x=\"[0-9.]+\" y=\"[0-9.]+\" width=\"[0-9.]+\" height=\"[0-9.]+\" fill=\"#1f77b4\"");
    CHECK(std::distance(std::sregex_iterator(svg.begin(), svg.end(), bar), std::sregex_iterator()) == 2);
    CHECK_THROWS_AS(histogram_svg("lo,hi\n0,1\n", {}), LookupError);
  }

  TEST_CASE("titles are escaped") {
    const std::string svg = line_chart_svg("x,y\n0,0\n", "x", {{"y", "a<b"}}, {"R&D", "x", "y"});
    CHECK(svg.find("R&amp;D") != std::string::npos);
    CHECK(svg.find("a&lt;b") != std::string::npos);
  }
}

TEST_SUITE("summary") {
  TEST_CASE("summary block reports the operating point") {
    const auto samples = metrics::zip_scores({1, 1, 0, 0}, {0.9, 0.4, 0.2, 0.6});
    const Summary s = summarize(samples, 0.5);
    CHECK(s.cm == metrics::ConfusionMatrix{1, 1, 1, 1});
    CHECK(s.auc == doctest::Approx(0.75));
    const std::string text = summary_text(s);
    CHECK(text.find("sensitivity  0.5000") != std::string::npos);
    CHECK(text.find("auc          0.7500") != std::string::npos);
    CHECK(text.find("score > threshold") != std::string::npos);
  }
}
