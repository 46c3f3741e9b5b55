#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "attnct/dataset.hpp"
#include "attnct/errors.hpp"
#include "attnct/explain.hpp"
#include "attnct/image_io.hpp"
#include "attnct/model_io.hpp"
#include "attnct/report.hpp"

namespace fs = std::filesystem;

namespace attnct::cli {
namespace {

constexpr const char* kRunConfigFile = "run_config.txt";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
    throw IoError(path.string() + ": cannot write file");
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot read file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_within(const fs::path& inner, const fs::path& outer) {
  const fs::path a = fs::weakly_canonical(fs::absolute(inner)), b = fs::weakly_canonical(fs::absolute(outer));
  auto ia = a.begin(), ib = b.begin();
  for (; ib != b.end(); ++ia, ++ib) {
    if (ib->empty()) continue;
    if (ia == a.end() || *ia != *ib) return false;
  }
  return true;
}

/// Creates the output directory and records the resolved configuration in it.
void open_output(const RunConfig& cfg) {
  if (cfg.out.empty()) throw UsageError("an output directory (--out) is required");
  if (!cfg.input.data.empty() && is_within(cfg.out, cfg.input.data)) {
    throw UsageError("output directory " + cfg.out.string() + " lies inside the input dataset " +
                     cfg.input.data.string());
  }
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec || !fs::is_directory(cfg.out)) throw IoError(cfg.out.string() + ": cannot create output directory");
  write_text(cfg.out / kRunConfigFile, cfg.text());
}

void require_input(const fs::path& p, const char* flag) {
  if (p.empty()) throw UsageError(std::string(flag) + " is required");
}

/// Replaces cfg.net with the model's configuration. Network keys set
/// explicitly must agree with the model.
void adopt_model(RunConfig& cfg, const net::AttentionNetConfig& model_cfg) {
  const bool geometry_set = cfg.explicit_keys.count("net.input_size") || cfg.explicit_keys.count("net.input_height") ||
                            cfg.explicit_keys.count("net.input_width") ||
                            cfg.explicit_keys.count("net.input_channels");
  if (geometry_set && (cfg.net.input_height != model_cfg.input_height || cfg.net.input_width != model_cfg.input_width ||
                       cfg.net.input_channels != model_cfg.input_channels)) {
    throw ConfigError("input geometry mismatch: the model expects " + std::to_string(model_cfg.input_channels) +
                      " x " + std::to_string(model_cfg.input_height) + " x " + std::to_string(model_cfg.input_width) +
                      ", the configuration requests " + std::to_string(cfg.net.input_channels) + " x " +
                      std::to_string(cfg.net.input_height) + " x " + std::to_string(cfg.net.input_width));
  }
  std::map<std::string, std::string> model_kv;
  for (auto& [k, v] : model_cfg.to_kv()) model_kv[k] = v;
  for (auto& [k, v] : cfg.net.to_kv()) {
    if (cfg.explicit_keys.count(k) && model_kv.at(k) != v) {
      throw ConfigError("configuration sets " + k + "=" + v + " but the model was built with " + k + "=" +
                        model_kv.at(k));
    }
  }
  cfg.net = model_cfg;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Tensor load_image(const fs::path& path, const net::AttentionNetConfig& net_cfg) {
  Tensor img = data::read_pgm(path);
  if (img.dim(1) != net_cfg.input_height || img.dim(2) != net_cfg.input_width) {
    img = data::resize_image(img, net_cfg.input_height, net_cfg.input_width);
  }
  return img;
}

Tensor load_mask(const fs::path& path, const net::AttentionNetConfig& net_cfg) {
  Tensor m = load_image(path, net_cfg);
  for (auto& v : m.data()) v = v > 0.5 ? 1.0 : 0.0;
  return m;
}

const std::set<std::string> kDatasetEntries{"covid", "non_covid", "masks", "split.txt", "manifest.txt",
                                            kRunConfigFile};

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const LookupError*>(&e)) {
    return kUsage;
  }
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return kData;
  }
  if (dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  return kInternal;
}

SynthOutcome cmd_synth(RunConfig cfg, bool force, std::ostream& log) {
  cfg.resolve();
  if (cfg.out.empty()) throw UsageError("an output directory (--out) is required");
  if (fs::exists(cfg.out)) {
    if (!fs::is_directory(cfg.out)) throw UsageError(cfg.out.string() + " exists and is not a directory");
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(cfg.out)) entries.push_back(e.path());
    if (!entries.empty()) {
      if (!force) throw UsageError(cfg.out.string() + " is not empty; pass --force to replace the dataset in it");
      for (const auto& e : entries) {
        if (!kDatasetEntries.count(e.filename().string())) {
          throw UsageError("--force refused: " + e.string() + " is not part of a generated dataset");
        }
      }
      for (const auto& e : entries) fs::remove_all(e);
    }
  }
  auto spec = data::synthetic_spec_for(cfg.synth_n, cfg.synth_size, cfg.seed);
  const auto set = data::generate_synthetic(spec);
  open_output(cfg);
  data::write_dataset(cfg.out, set.split);

  const std::size_t tr = set.split.train.size(), te = set.split.test.size();
  kv::Entries manifest{
      {"samples", std::to_string(tr + te)},
      {"train", std::to_string(tr)},
      {"test", std::to_string(te)},
      {"train.covid", std::to_string(data::count_label(set.split.train, data::kCovid))},
      {"train.non_covid", std::to_string(data::count_label(set.split.train, data::kNonCovid))},
      {"test.covid", std::to_string(data::count_label(set.split.test, data::kCovid))},
      {"test.non_covid", std::to_string(data::count_label(set.split.test, data::kNonCovid))},
      {"height", std::to_string(spec.height)},
      {"width", std::to_string(spec.width)},
      {"seed", std::to_string(spec.seed)},
      {"separability.threshold", fixed(set.separability_threshold)},
      {"separability.test_accuracy", fixed(set.separability_accuracy)},
  };
  write_text(cfg.out / "manifest.txt", kv::format(manifest));
  log << "wrote " << tr + te << " images (" << tr << " train, " << te << " test) to " << cfg.out.string()
      << "; mean-intensity separability " << fixed(set.separability_accuracy, 3) << "\n";
  return {tr, te, set.separability_accuracy};
}

TrainOutcome cmd_train(RunConfig cfg, std::ostream& log) {
  require_input(cfg.input.data, "--data");
  cfg.resolve();
  const auto split = data::load_dataset(cfg.input.data, cfg.split);
  const auto td = train::prepare_training_data(split.train, cfg.train, cfg.augment);
  open_output(cfg);
  if (cfg.train.checkpoint_every > 0) fs::create_directories(cfg.out / "checkpoints");

  net::Network network(cfg.net, cfg.seed);
  const fs::path epochs_path = cfg.out / "epochs.csv";
  std::ofstream epochs(epochs_path, std::ios::binary | std::ios::trunc);
  if (!epochs) throw IoError(epochs_path.string() + ": cannot write file");
  train::write_epoch_header(epochs);
  log << "training on " << td.train.size() << " samples (" << td.train_originals.size() << " before augmentation), "
      << td.validation.size() << " validation, " << cfg.optimizer.label() << "\n";

  train::TrainCallbacks cb;
  cb.on_epoch = [&](const train::EpochRecord& r) {
    train::write_epoch_row(epochs, r);
    epochs.flush();
    log << "epoch " << r.epoch << "/" << cfg.train.epochs << "  loss " << fixed(r.train_loss, 5) << "  train sens "
        << metrics::format_metric(r.train_sens, 3) << " spec " << metrics::format_metric(r.train_spec, 3)
        << "  val sens " << metrics::format_metric(r.val_sens, 3) << " spec "
        << metrics::format_metric(r.val_spec, 3) << "\n";
  };
  cb.on_checkpoint = [&](const net::Network& n, std::size_t epoch) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu.bin", epoch);
    net::save_model(cfg.out / "checkpoints" / name, n, epoch);
  };
  TrainOutcome outcome;
  outcome.result = train::train(network, td, cfg.train, cfg.optimizer, cb);
  epochs.close();
  outcome.model = cfg.out / "model.bin";
  net::save_model(outcome.model, network, cfg.train.epochs);

  const std::string csv = read_text(epochs_path);
  const std::pair<double, double> x_range{1.0, std::max<double>(2.0, static_cast<double>(cfg.train.epochs))};
  write_text(cfg.out / "sensitivity.svg",
             report::line_chart_svg(csv, "epoch", {{"train_sens", "train"}, {"val_sens", "validation"}},
                                    {"Sensitivity per epoch", "epoch", "sensitivity", x_range}));
  write_text(cfg.out / "specificity.svg",
             report::line_chart_svg(csv, "epoch", {{"train_spec", "train"}, {"val_spec", "validation"}},
                                    {"Specificity per epoch", "epoch", "specificity", x_range}));
  double peak = 0.0;
  for (const auto& r : outcome.result.records) peak = std::max(peak, r.train_loss);
  write_text(cfg.out / "loss.svg",
             report::line_chart_svg(csv, "epoch", {{"train_loss", "train loss"}},
                                    {"Training loss per epoch", "epoch", "binary cross-entropy", x_range,
                                     {0.0, peak > 0.0 ? peak : 1.0}}));
  log << "final train accuracy " << metrics::format_metric(outcome.result.train_accuracy) << ", validation accuracy "
      << metrics::format_metric(outcome.result.val_accuracy) << "; model written to " << outcome.model.string()
      << "\n";
  return outcome;
}

std::vector<train::OptimizerConfig> parse_grid(const std::string& text, const std::string& source) {
  std::vector<train::OptimizerConfig> grid;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind, lr, extra;
    if (!(ls >> kind)) continue;
    const std::string where = source + ":" + std::to_string(n) + ": ";
    if (!(ls >> lr) || (ls >> extra)) throw ConfigError(where + "expected `<optimizer> <learning rate>`");
    train::OptimizerConfig c;
    try {
      c.kind = train::parse_optimizer(kind);
      c.learning_rate = kv::parse_double("learning rate", lr);
      c.validate();
    } catch (const Error& e) {
      throw ConfigError(where + e.what());
    }
    grid.push_back(c);
  }
  if (grid.empty()) throw InputError(source + ": the grid has no entries");
  return grid;
}

std::vector<train::SweepResult> cmd_sweep(RunConfig cfg, std::ostream& log) {
  require_input(cfg.input.data, "--data");
  require_input(cfg.input.grid, "--grid");
  cfg.resolve();
  const auto grid = parse_grid(read_text(cfg.input.grid), cfg.input.grid.string());
  const auto split = data::load_dataset(cfg.input.data, cfg.split);
  open_output(cfg);

  train::SweepSpec spec;
  spec.grid = grid;
  spec.repeat_seeds = cfg.repeat_seeds;
  spec.network = cfg.net;
  spec.train = cfg.train;
  spec.augmentation = cfg.augment;
  log << "sweeping " << grid.size() << " configurations over " << spec.repeat_seeds.size() << " seed(s)\n";
  const auto results = train::hyperparameter_sweep(spec, split.train, split.test);
  write_text(cfg.out / "hyperparameters.csv", report::sweep_results_csv(results));
  const std::string table = report::sweep_results_table(results);
  write_text(cfg.out / "hyperparameters.txt", table);
  log << table;
  return results;
}

EvalOutcome cmd_eval(RunConfig cfg, std::ostream& log) {
  require_input(cfg.input.model, "--model");
  require_input(cfg.input.data, "--data");
  auto loaded = net::load_model(cfg.input.model);
  adopt_model(cfg, loaded.network.config());
  cfg.resolve();
  auto split = data::load_dataset(cfg.input.data, cfg.split);
  std::vector<data::Sample> samples;
  if (cfg.eval_split != RunConfig::EvalSplit::test) samples = split.train;
  if (cfg.eval_split != RunConfig::EvalSplit::train) samples.insert(samples.end(), split.test.begin(), split.test.end());
  if (samples.empty()) throw InputError(cfg.input.data.string() + ": the selected split is empty");
  open_output(cfg);

  net::Network& network = loaded.network;
  const auto scores = train::score_samples(network, samples);
  const auto labels = train::labels_of(samples);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.source_id);
  EvalOutcome out;
  out.scored = metrics::zip_scores(labels, scores);
  write_text(cfg.out / "scores.csv", report::scores_csv(ids, labels, scores));

  const std::pair<double, double> unit{0.0, 1.0};
  const std::string sweep = report::sweep_csv(metrics::threshold_sweep(out.scored, cfg.thresholds));
  write_text(cfg.out / "sweep.csv", sweep);
  write_text(cfg.out / "sweep.svg",
             report::line_chart_svg(sweep, "threshold",
                                    {{"sens", "sensitivity"}, {"spec", "specificity"}, {"f1", "F1"}},
                                    {"Threshold sweep (positive iff score > threshold)", "threshold", "metric", unit}));

  const auto roc = metrics::roc_curve(out.scored);
  out.auc = roc.auc;
  const std::string roc_text = report::roc_csv(roc);
  write_text(cfg.out / "roc.csv", roc_text);
  write_text(cfg.out / "roc.svg", report::line_chart_svg(roc_text, "fpr", {{"tpr", "ROC, AUC " + fixed(roc.auc, 4)}},
                                                         {"ROC curve", "false positive rate", "true positive rate", unit}));
  const std::string pr = report::pr_csv(metrics::pr_curve(out.scored));
  write_text(cfg.out / "pr.csv", pr);
  write_text(cfg.out / "pr.svg", report::line_chart_svg(pr, "recall", {{"precision", "precision"}},
                                                        {"Precision-recall curve", "recall", "precision", unit}));
  for (int label : {data::kCovid, data::kNonCovid}) {
    const std::string name = data::class_dir(label);
    const std::string hist = report::hist_csv(metrics::score_histogram(out.scored, label, cfg.histogram_bins));
    write_text(cfg.out / ("hist_" + name + ".csv"), hist);
    write_text(cfg.out / ("hist_" + name + ".svg"),
               report::histogram_svg(hist, {"Predicted scores, " + name + " samples", "score", "count"}));
  }

  const auto summary = report::summarize(out.scored, cfg.threshold);
  out.cm = summary.cm;
  write_text(cfg.out / "confusion.csv", report::confusion_csv(summary.cm));
  std::string text = report::summary_text(summary);

  if (cfg.eval_localization) {
    const std::string layer = cfg.explain_layer.empty() ? network.default_explain_layer() : cfg.explain_layer;
    std::string csv = "id,mask_fraction,gradcam,occlusion\n";
    for (const auto& s : samples) {
      if (s.label != data::kCovid || !s.mask) continue;
      LocalizationRow row;
      row.id = s.source_id;
      row.mask_fraction = s.mask->sum() / static_cast<double>(s.mask->numel());
      if (row.mask_fraction == 0.0) continue;
      row.gradcam = explain::localization_score(explain::grad_cam(network, s.image, layer).grid, *s.mask);
      row.occlusion = explain::localization_score(explain::occlusion_heatmap(network, s.image, cfg.occlusion).grid,
                                                  *s.mask);
      csv += row.id + "," + fixed(row.mask_fraction) + "," + fixed(row.gradcam) + "," + fixed(row.occlusion) + "\n";
      out.localization.push_back(row);
    }
    write_text(cfg.out / "localization.csv", csv);
    std::vector<double> frac, gc, occ;
    for (const auto& r : out.localization) {
      frac.push_back(r.mask_fraction);
      gc.push_back(r.gradcam);
      occ.push_back(r.occlusion);
    }
    text += "localization (" + std::to_string(out.localization.size()) + " positive images with masks, layer " +
            layer + ")\n  median mask fraction " + fixed(median(frac), 4) + "\n  median gradcam       " +
            fixed(median(gc), 4) + "\n  median occlusion     " + fixed(median(occ), 4) + "\n";
  }
  write_text(cfg.out / "summary.txt", text);
  log << text;
  return out;
}

ExplainOutcome cmd_explain(RunConfig cfg, std::ostream& log) {
  require_input(cfg.input.model, "--model");
  require_input(cfg.input.image, "--image");
  auto loaded = net::load_model(cfg.input.model);
  adopt_model(cfg, loaded.network.config());
  cfg.resolve();
  net::Network& network = loaded.network;
  const Tensor image = load_image(cfg.input.image, cfg.net);
  std::optional<Tensor> mask;
  if (!cfg.input.mask.empty()) mask = load_mask(cfg.input.mask, cfg.net);
  const std::string layer = cfg.explain_layer.empty() ? network.default_explain_layer() : cfg.explain_layer;
  if (cfg.explain_method != explain::Method::occlusion) {
    const auto names = network.layer_names();
    if (std::find(names.begin(), names.end(), layer) == names.end()) {
      std::string msg = "unknown layer `" + layer + "`; valid layers:";
      for (const auto& n : names) msg += " " + n;
      throw UsageError(msg);
    }
  }
  open_output(cfg);

  explain::SaliencyMap map;
  switch (cfg.explain_method) {
    case explain::Method::gradcam: map = explain::grad_cam(network, image, layer); break;
    case explain::Method::gradcampp: map = explain::grad_cam_pp(network, image, layer); break;
    case explain::Method::occlusion: map = explain::occlusion_heatmap(network, image, cfg.occlusion); break;
  }
  write_text(cfg.out / "saliency.csv", explain::saliency_csv(map.grid));
  const auto overlay = explain::render_overlay(image, map.grid, mask);
  data::write_pgm(cfg.out / "overlay.pgm", overlay.panel);
  write_text(cfg.out / "overlay.svg", overlay.svg);

  ExplainOutcome out{map.grid, std::nullopt};
  const double score = network.predict(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}))[0];
  log << "score " << fixed(score) << " (" << explain::to_string(cfg.explain_method)
      << (cfg.explain_method == explain::Method::occlusion ? "" : ", layer " + layer) << ")\n";
  if (mask) {
    out.localization = explain::localization_score(map.grid, *mask);
    const double frac = mask->sum() / static_cast<double>(mask->numel());
    write_text(cfg.out / "localization.txt",
               "localization_score=" + fixed(*out.localization) + "\nmask_fraction=" + fixed(frac) + "\n");
    log << "localization score " << fixed(*out.localization, 4) << " (mask area fraction " << fixed(frac, 4) << ")\n";
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual attention network toolkit for binary CT classification", "attnct"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  RunConfig cfg;
  std::string config_file;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> flags;  // config key -> flag value
  bool force = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key=value configuration file");
    sub->add_option("--set", overrides, "Override one configuration key (KEY=VALUE); repeatable");
    sub->add_option_function<std::string>("--seed", [&](const std::string& v) { flags["seed"] = v; },
                                          "Global seed (falls back to ATTNCT_SEED, then 0)");
  };
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    return sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic lesion dataset");
  flag(synth, "--out", "out", "Output dataset directory")->required();
  flag(synth, "--n", "synth.n", "Images per class, train and test together (default 50)");
  flag(synth, "--size", "synth.size", "Image side in pixels (default 128)");
  synth->add_flag("--force", force, "Replace an existing generated dataset");
  common(synth);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  flag(train_cmd, "--data", "input.data", "Dataset directory")->required();
  flag(train_cmd, "--out", "out", "Output directory")->required();
  flag(train_cmd, "--epochs", "train.epochs", "Number of epochs");
  common(train_cmd);

  auto* sweep = app.add_subcommand("sweep", "Optimizer and learning-rate sweep");
  flag(sweep, "--data", "input.data", "Dataset directory")->required();
  flag(sweep, "--grid", "input.grid", "Grid file, one `<optimizer> <learning rate>` per line")->required();
  flag(sweep, "--out", "out", "Output directory")->required();
  flag(sweep, "--epochs", "train.epochs", "Number of epochs");
  flag(sweep, "--repeat-seeds", "sweep.repeat_seeds", "Comma-separated repeat seeds");
  common(sweep);

  auto* eval = app.add_subcommand(
      "eval", "Score a dataset split and write the report. A sample is predicted positive iff score > threshold.");
  flag(eval, "--model", "input.model", "Model container")->required();
  flag(eval, "--data", "input.data", "Dataset directory")->required();
  flag(eval, "--out", "out", "Output directory")->required();
  flag(eval, "--thresholds", "eval.thresholds", "Ascending comma-separated sweep thresholds (default 0.1,...,0.9)");
  flag(eval, "--threshold", "eval.threshold", "Operating threshold for the confusion matrix (default 0.5)");
  flag(eval, "--split", "eval.split", "test, train, or all (default test)");
  eval->add_flag_function("--localization", [&](std::int64_t) { flags["eval.localization"] = "true"; },
                          "Add Grad-CAM and occlusion localization scores for masked positive images");
  common(eval);

  auto* expl = app.add_subcommand("explain", "Saliency map for one image");
  flag(expl, "--model", "input.model", "Model container")->required();
  flag(expl, "--image", "input.image", "PGM image")->required();
  flag(expl, "--method", "explain.method", "gradcam, gradcampp, or occlusion");
  flag(expl, "--layer", "explain.layer", "Captured layer (default: last attention module)");
  flag(expl, "--patch", "occlusion.patch", "Occlusion window side N");
  flag(expl, "--stride", "occlusion.stride", "Occlusion stride S");
  flag(expl, "--target", "occlusion.target", "Occlusion drop measured on probability or logit");
  flag(expl, "--mask", "input.mask", "Binary PGM mask; prints the localization score");
  flag(expl, "--out", "out", "Output directory (default explain_<image name>)");
  common(expl);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    cfg.seed = seed_from_environment(0);
    if (!config_file.empty()) cfg.apply_file(config_file);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got `" + o + "`");
      cfg.apply(o.substr(0, eq), o.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) cfg.apply(k, v);

    if (synth->parsed()) {
      cmd_synth(cfg, force, out);
    } else if (train_cmd->parsed()) {
      cmd_train(cfg, out);
    } else if (sweep->parsed()) {
      cmd_sweep(cfg, out);
    } else if (eval->parsed()) {
      cmd_eval(cfg, out);
    } else if (expl->parsed()) {
      if (cfg.out.empty()) cfg.out = "explain_" + cfg.input.image.stem().string();
      const auto r = cmd_explain(cfg, out);
      (void)r;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace attnct::cli
