#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "attnct/dataset.hpp"
#include "attnct/errors.hpp"
#include "attnct/metrics.hpp"
#include "attnct/report.hpp"
#include "commands.hpp"
#include "doctest.h"
#include "run_config.hpp"
#include "temp_dir.hpp"

using namespace attnct;
using namespace attnct::cli;
namespace fs = std::filesystem;

namespace {

struct Invocation {
  int code = 0;
  std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "attnct");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Relative path -> bytes for every regular file under `root`.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

const char* kSmallConfig =
    "net.input_size=32\n"
    "net.stage_channels=4,8\n"
    "net.stem_stride=1\n"
    "train.epochs=2\n"
    "train.batch_size=8\n"
    "train.timing=off\n";

struct Workspace {
  TempDir dir{"cli"};
  fs::path data = dir.path / "data";
  fs::path config = dir.path / "small.cfg";

  Workspace() {
    spit(config, kSmallConfig);
    const auto r = invoke({"synth", "--out", data.string(), "--n", "8", "--size", "32", "--seed", "5"});
    REQUIRE(r.code == 0);
  }
};

}  // namespace

TEST_SUITE("run config") {
  TEST_CASE("serialized text reproduces the configuration") {
    RunConfig a;
    a.apply_text(
        "seed=11\nnet.stage_channels=8,16\ntrain.optimizer=adam\ntrain.lr=0.0003\naugment.skew.enabled=false\n"
        "occlusion.patch=8\neval.thresholds=0.25,0.5\nexplain.method=occlusion\nsweep.repeat_seeds=1,2,3\n",
        "a.cfg");
    a.resolve();
    RunConfig b;
    b.apply_text(a.text(), "round trip");
    b.resolve();
    CHECK(b.text() == a.text());
    CHECK(b.optimizer.kind == train::OptimizerKind::adam);
    CHECK(b.train.seed == 11);
    CHECK(b.split.height == b.net.input_height);
  }

  TEST_CASE("errors name the file and line") {
    RunConfig c;
    try {
      c.apply_text("train.epochs=3\n# note\ntrain.lr=fast\n", "bad.cfg");
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).rfind("bad.cfg:3: train.lr", 0) == 0);
    }
    CHECK_THROWS_AS(c.apply("train.nope", "1"), ConfigError);
    c.apply("eval.thresholds", "0.5,0.2");
    CHECK_THROWS_AS(c.resolve(), ConfigError);
  }

  TEST_CASE("grid files") {
    const auto g = parse_grid("# optimizer lr\nadam 0.001\n\nrmsprop 1e-4  # small\n", "grid");
    REQUIRE(g.size() == 2);
    CHECK(g[1].kind == train::OptimizerKind::rmsprop);
    CHECK(g[1].learning_rate == 1e-4);
    CHECK_THROWS_AS(parse_grid("adam\n", "grid"), ConfigError);
    CHECK_THROWS_AS(parse_grid("lbfgs 0.1\n", "grid"), ConfigError);
    CHECK_THROWS_AS(parse_grid("# empty\n", "grid"), InputError);
  }

  TEST_CASE("exit codes") {
    CHECK(exit_code_for(UsageError("u")) == 2);
    CHECK(exit_code_for(ConfigError("c")) == 2);
    CHECK(exit_code_for(LookupError("l")) == 2);
    CHECK(exit_code_for(InputError("i")) == 3);
    CHECK(exit_code_for(IoError("io")) == 3);
    CHECK(exit_code_for(NumericalError("n")) == 4);
    CHECK(exit_code_for(std::runtime_error("x")) == 1);
    CHECK(invoke({"frobnicate"}).code == 2);
    CHECK(invoke({"train"}).code == 2);
  }
}

TEST_SUITE("synth command") {
  TEST_CASE("same seed gives byte-identical directories") {
    TempDir dir("synth");
    const auto a = dir.path / "a", b = dir.path / "b";
    REQUIRE(invoke({"synth", "--out", a.string(), "--n", "10", "--size", "32", "--seed", "3"}).code == 0);
    REQUIRE(invoke({"synth", "--out", b.string(), "--n", "10", "--size", "32", "--seed", "3"}).code == 0);
    auto sa = snapshot(a), sb = snapshot(b);
    // run_config.txt records its own output path.
    CHECK(sa.erase("run_config.txt") == 1);
    CHECK(sb.erase("run_config.txt") == 1);
    CHECK(sa == sb);
    CHECK(sa.size() > 20);
  }

  TEST_CASE("manifest counts and separability") {
    TempDir dir("manifest");
    const auto out = dir.path / "d";
    REQUIRE(invoke({"synth", "--out", out.string(), "--n", "20", "--size", "32", "--seed", "1"}).code == 0);
    RunConfig ignored;
    std::map<std::string, std::string> m;
    for (const auto& l : kv::parse_text(slurp(out / "manifest.txt"))) m[l.key] = l.value;
    CHECK(m.at("samples") == "40");
    CHECK(m.at("train") == "30");
    CHECK(m.at("test") == "10");
    CHECK(m.at("test.covid") == "5");
    CHECK(std::stod(m.at("separability.test_accuracy")) >= 0.9);
  }

  TEST_CASE("refuses to overwrite without --force") {
    TempDir dir("force");
    const auto out = dir.path / "d";
    const std::vector<std::string> args{"synth", "--out", out.string(), "--n", "4", "--size", "32"};
    REQUIRE(invoke(args).code == 0);
    const auto again = invoke(args);
    CHECK(again.code == 2);
    CHECK(again.err.find("--force") != std::string::npos);
    auto forced = args;
    forced.push_back("--force");
    CHECK(invoke(forced).code == 0);
    spit(out / "notes.txt", "keep me");
    CHECK(invoke(forced).code == 2);
    CHECK(fs::exists(out / "notes.txt"));
  }

  TEST_CASE("seed precedence: flag, config, environment") {
    TempDir dir("seed");
    auto seed_in = [](const fs::path& out) {
      for (const auto& l : kv::parse_text(slurp(out / "run_config.txt"))) {
        if (l.key == "seed") return l.value;
      }
      return std::string();
    };
    ::setenv("ATTNCT_SEED", "42", 1);
    REQUIRE(invoke({"synth", "--out", (dir.path / "env").string(), "--n", "4", "--size", "32"}).code == 0);
    CHECK(seed_in(dir.path / "env") == "42");
    spit(dir.path / "seed.cfg", "seed=9\n");
    REQUIRE(invoke({"synth", "--out", (dir.path / "cfg").string(), "--n", "4", "--size", "32", "--config",
                 (dir.path / "seed.cfg").string()})
                .code == 0);
    CHECK(seed_in(dir.path / "cfg") == "9");
    REQUIRE(invoke({"synth", "--out", (dir.path / "flag").string(), "--n", "4", "--size", "32", "--config",
                 (dir.path / "seed.cfg").string(), "--seed", "3"})
                .code == 0);
    CHECK(seed_in(dir.path / "flag") == "3");
    ::unsetenv("ATTNCT_SEED");
  }
}

TEST_SUITE("train, eval, explain commands") {
  TEST_CASE("train writes its artifacts and is reproducible") {
    Workspace ws;
    const auto before = snapshot(ws.data);
    const auto a = ws.dir.path / "a", b = ws.dir.path / "b";
    REQUIRE(invoke({"train", "--data", ws.data.string(), "--out", a.string(), "--config", ws.config.string()}).code == 0);
    REQUIRE(invoke({"train", "--data", ws.data.string(), "--out", b.string(), "--config", ws.config.string()}).code == 0);
    for (const char* f : {"model.bin", "epochs.csv", "sensitivity.svg", "specificity.svg", "run_config.txt"}) {
      CAPTURE(f);
      CHECK(fs::exists(a / f));
    }
    CHECK(slurp(a / "epochs.csv") == slurp(b / "epochs.csv"));
    CHECK(slurp(a / "model.bin") == slurp(b / "model.bin"));
    CHECK(snapshot(ws.data) == before);

    // The recorded configuration alone reproduces the run.
    const auto c = ws.dir.path / "c";
    std::string cfg = slurp(a / "run_config.txt");
    cfg.replace(cfg.find("out=" + a.string()), 4 + a.string().size(), "out=" + c.string());
    spit(ws.dir.path / "replay.cfg", cfg);
    REQUIRE(invoke({"train", "--data", ws.data.string(), "--out", c.string(), "--config",
                 (ws.dir.path / "replay.cfg").string()})
                .code == 0);
    CHECK(slurp(c / "model.bin") == slurp(a / "model.bin"));
  }

  TEST_CASE("configuration and numerical failures map to their exit codes") {
    Workspace ws;
    spit(ws.dir.path / "bad.cfg", std::string(kSmallConfig) + "train.batch_size=0\n");
    const auto bad = invoke({"train", "--data", ws.data.string(), "--out", (ws.dir.path / "x").string(), "--config",
                          (ws.dir.path / "bad.cfg").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("bad.cfg:7") != std::string::npos);

    const auto missing = invoke({"train", "--data", (ws.dir.path / "nowhere").string(), "--out",
                              (ws.dir.path / "y").string(), "--config", ws.config.string()});
    CHECK(missing.code == 3);

    const auto blowup = invoke({"train", "--data", ws.data.string(), "--out", (ws.dir.path / "z").string(), "--config",
                             ws.config.string(), "--set", "train.lr=1e308", "--set", "train.optimizer=sgd"});
    CHECK(blowup.code == 4);
    CHECK(blowup.err.find("epoch") != std::string::npos);

    const auto inside = invoke({"train", "--data", ws.data.string(), "--out", (ws.data / "out").string(), "--config",
                             ws.config.string()});
    CHECK(inside.code == 2);
    CHECK(!fs::exists(ws.data / "out"));
  }

  TEST_CASE("eval report agrees with a recount from scores.csv") {
    Workspace ws;
    const auto model = ws.dir.path / "m";
    REQUIRE(invoke({"train", "--data", ws.data.string(), "--out", model.string(), "--config", ws.config.string()}).code ==
            0);
    const auto ev = ws.dir.path / "ev";
    const auto r = invoke({"eval", "--model", (model / "model.bin").string(), "--data", ws.data.string(), "--out",
                        ev.string(), "--split", "all"});
    REQUIRE(r.code == 0);
    for (const char* f : {"scores.csv", "sweep.csv", "sweep.svg", "roc.csv", "roc.svg", "pr.csv", "pr.svg",
                          "hist_covid.csv", "hist_non_covid.svg", "confusion.csv", "summary.txt", "run_config.txt"}) {
      CAPTURE(f);
      CHECK(fs::exists(ev / f));
    }
    const auto scores = report::parse_csv(slurp(ev / "scores.csv"));
    const auto sweep = report::parse_csv(slurp(ev / "sweep.csv"));
    REQUIRE(scores.rows.size() == 16);
    REQUIRE(sweep.rows.size() == 9);
    for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
      const double t = *sweep.number(i, sweep.column("threshold"));
      CHECK(t == doctest::Approx(0.1 * static_cast<double>(i + 1)));
      std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
      for (std::size_t k = 0; k < scores.rows.size(); ++k) {
        const bool positive = *scores.number(k, scores.column("score")) > t;
        const bool covid = scores.rows[k][scores.column("label")] == "1";
        tp += positive && covid;
        fp += positive && !covid;
        tn += !positive && !covid;
        fn += !positive && covid;
      }
      CHECK(*sweep.number(i, sweep.column("tp")) == tp);
      CHECK(*sweep.number(i, sweep.column("fp")) == fp);
      CHECK(*sweep.number(i, sweep.column("tn")) == tn);
      CHECK(*sweep.number(i, sweep.column("fn")) == fn);
    }
    CHECK(r.out.find("auc") != std::string::npos);

    const auto mismatch = invoke({"eval", "--model", (model / "model.bin").string(), "--data", ws.data.string(), "--out",
                               (ws.dir.path / "ev2").string(), "--set", "net.input_size=64"});
    CHECK(mismatch.code == 2);
    CHECK(mismatch.err.find("1 x 32 x 32") != std::string::npos);
    CHECK(mismatch.err.find("1 x 64 x 64") != std::string::npos);
  }

  TEST_CASE("a memorized separable set scores perfectly") {
    TempDir dir("memo");
    Rng rng(3);
    data::DatasetSplit split;
    for (int k = 0; k < 10; ++k) {
      const int label = k % 2;
      Tensor img({1, 32, 32}, label ? 0.8 : 0.2);
      for (auto& v : img.data()) v += rng.uniform(-0.02, 0.02);
      split.train.push_back({img, label, std::string(data::class_dir(label)) + "/m" + std::to_string(k) + ".pgm", {}});
    }
    data::write_dataset(dir.path / "data", split);
    spit(dir.path / "memo.cfg", "net.input_size=32\nnet.stage_channels=4,8\nnet.stem_stride=1\ntrain.timing=off\n"
                                "train.epochs=40\ntrain.validation_fraction=0\ntrain.augmentation_factor=1\n");
    REQUIRE(invoke({"train", "--data", (dir.path / "data").string(), "--out", (dir.path / "m").string(), "--config",
                 (dir.path / "memo.cfg").string(), "--set", "train.batch_size=10"})
                .code == 0);
    const auto ev = dir.path / "ev";
    REQUIRE(invoke({"eval", "--model", (dir.path / "m" / "model.bin").string(), "--data", (dir.path / "data").string(),
                 "--out", ev.string(), "--split", "train"})
                .code == 0);
    CHECK(slurp(ev / "summary.txt").find("auc          1.0000") != std::string::npos);
    const auto sweep = report::parse_csv(slurp(ev / "sweep.csv"));
    for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
      CHECK(*sweep.number(i, sweep.column("sens")) == 1.0);
      CHECK(*sweep.number(i, sweep.column("spec")) == 1.0);
    }
  }

  TEST_CASE("explain outputs, determinism, and errors") {
    Workspace ws;
    const auto model = ws.dir.path / "m";
    REQUIRE(invoke({"train", "--data", ws.data.string(), "--out", model.string(), "--config", ws.config.string()}).code ==
            0);
    const std::string mb = (model / "model.bin").string();
    fs::path image;
    for (const auto& e : fs::directory_iterator(ws.data / "covid")) image = e.path();
    const fs::path mask = ws.data / "masks" / "covid" / image.filename();
    REQUIRE(fs::exists(mask));

    const auto e1 = ws.dir.path / "e1", e2 = ws.dir.path / "e2";
    const auto r1 = invoke({"explain", "--model", mb, "--image", image.string(), "--mask", mask.string(), "--out",
                         e1.string(), "--method", "gradcampp"});
    REQUIRE(r1.code == 0);
    CHECK(r1.out.find("localization score") != std::string::npos);
    REQUIRE(invoke({"explain", "--model", mb, "--image", image.string(), "--mask", mask.string(), "--out", e2.string(),
                 "--method", "gradcampp"})
                .code == 0);
    CHECK(slurp(e1 / "saliency.csv") == slurp(e2 / "saliency.csv"));
    CHECK(slurp(e1 / "overlay.pgm").rfind("P5\n128 32\n", 0) == 0);  // four 32-wide panels
    CHECK(fs::exists(e1 / "overlay.svg"));

    const auto single = ws.dir.path / "single";
    REQUIRE(invoke({"explain", "--model", mb, "--image", image.string(), "--method", "occlusion", "--patch", "32",
                 "--stride", "32", "--out", single.string()})
                .code == 0);
    const auto sal = report::parse_csv(slurp(single / "saliency.csv"));
    REQUIRE(sal.rows.size() == 32 * 32);
    const auto first = *sal.number(0, 2);
    CHECK((first == 0.0 || first == 1.0));
    for (std::size_t i = 0; i < sal.rows.size(); ++i) CHECK(*sal.number(i, 2) == first);

    const auto bad_layer = invoke({"explain", "--model", mb, "--image", image.string(), "--layer", "stage7",
                                "--out", (ws.dir.path / "bl").string()});
    CHECK(bad_layer.code == 2);
    CHECK(bad_layer.err.find("stage1.attn") != std::string::npos);
    CHECK(invoke({"explain", "--model", mb, "--image", image.string(), "--method", "lime", "--out",
               (ws.dir.path / "bm").string()})
              .code == 2);
  }
}
