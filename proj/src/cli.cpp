#include "camgauge/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "camgauge/bench.hpp"
#include "camgauge/error.hpp"

namespace camgauge {

int workers_from_env(int fallback) {
  const char* env = std::getenv("CAMGAUGE_WORKERS");
  if (!env || !*env) return fallback;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) return fallback;
  return static_cast<int>(v);
}

namespace {

struct DatasetArgs {
  std::string out, backgrounds;
  std::uint64_t seed = 0;
  int train_per_class = 600, test_per_class = 100, image_size = 224, workers = 0;
  double scale_min = 16.0, scale_max = 128.0, contrast = DatasetConfig{}.procedural_contrast;
  bool no_fallback = false;
};

struct TrainArgs {
  std::string data, out;
  std::uint64_t seed = 0;
  TrainConfig config;
  bool no_flip = false;
  bool no_rotate = false;
  int workers = 0;
};

struct EvalArgs {
  std::string config_path, model, data, out = "results.jsonl", layers = "shallowest", model_id;
  std::vector<std::string> methods, metrics, refine_modes;
  std::vector<double> road_fractions;
  double road_noise_std = 0.01;
  std::uint64_t road_noise_seed = 0, seed = 0;
  bool refine = false, assert_invariants = false;
  int limit = 0, workers = 0;
};

struct CorrelateArgs {
  std::string results, against = "cosine", out;
};

struct ReportArgs {
  std::string results, out, against = "cosine";
};

struct SanityArgs {
  std::string model, data, out;
  int limit = 200, workers = 0;
  std::uint64_t seed = 0;
};

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

void print_summary(const SummaryTable& table, std::ostream& out) {
  out << std::left << std::setw(22) << "method" << std::setw(10) << "layer";
  for (const auto& m : table.metrics) out << std::right << std::setw(10) << m;
  out << "\n";
  for (const auto& row : table.rows) {
    out << std::left << std::setw(22) << row.method_id << std::setw(10) << row.layer_id;
    for (const auto& c : row.cells) {
      if (c)
        out << std::right << std::setw(10) << std::fixed << std::setprecision(4) << c->mean;
      else
        out << std::right << std::setw(10) << "-";
    }
    out << "\n";
  }
  out << std::defaultfloat;
}

void print_correlations(const CorrelationTable& table, std::ostream& out) {
  out << std::left << std::setw(10) << "metric" << std::right << std::setw(18) << "pearson" << std::setw(18)
      << "spearman" << std::setw(8) << "pairs" << "\n";
  for (const auto& e : table.entries) {
    out << std::left << std::setw(10) << e.metric << std::right;
    if (e.defined) {
      std::ostringstream p, s;
      p << std::fixed << std::setprecision(4) << e.pearson << " +/- " << e.pearson_std;
      s << std::fixed << std::setprecision(4) << e.spearman << " +/- " << e.spearman_std;
      out << std::setw(18) << p.str() << std::setw(18) << s.str() << std::setw(8) << e.pairs << "\n";
    } else {
      out << "  undefined (" << e.reason << ")\n";
    }
  }
}

bool report_checks(const std::vector<InvariantCheck>& checks, std::ostream& out) {
  bool ok = true;
  for (const auto& c : checks) {
    out << (c.passed ? "[pass] " : "[FAIL] ") << c.name;
    if (!c.detail.empty()) out << ": " << c.detail;
    out << "\n";
    ok = ok && c.passed;
  }
  return ok;
}

int run_dataset(const DatasetArgs& a, std::ostream& out) {
  DatasetConfig c;
  c.out = a.out;
  if (!a.backgrounds.empty()) c.backgrounds = a.backgrounds;
  c.seed = a.seed;
  c.train_per_class = a.train_per_class;
  c.test_per_class = a.test_per_class;
  c.generator.image_size = a.image_size;
  c.generator.scale_min = a.scale_min;
  c.generator.scale_max = a.scale_max;
  c.procedural_fallback = !a.no_fallback;
  c.procedural_contrast = a.contrast;
  c.workers = a.workers > 0 ? a.workers : workers_from_env(1);
  const DatasetManifest m = generate_dataset(c);
  out << "wrote " << m.samples.size() << " samples (" << m.train_backgrounds.size() << " train / "
      << m.test_backgrounds.size() << " test backgrounds) to " << a.out << "\n";
  return kExitOk;
}

int run_train(TrainArgs a, std::ostream& out, std::ostream& err) {
  TrainConfig& c = a.config;
  c.seed = a.seed;
  c.horizontal_flip = !a.no_flip;
  c.rotate90 = !a.no_rotate;
  c.workers = a.workers > 0 ? a.workers : workers_from_env(1);
  c.on_epoch = [&err](const EpochStats& s) {
    err << "epoch " << s.epoch << " loss " << std::fixed << std::setprecision(4) << s.loss << " lr "
        << std::setprecision(6) << s.learning_rate << " (" << std::setprecision(1) << s.seconds << " s)\n"
        << std::defaultfloat;
  };
  const TrainResult r = train_classifier(a.data, c);
  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  save_checkpoint(*r.model, class_names(), dir / "model.bin");

  nlohmann::ordered_json log;
  log["seed"] = a.seed;
  log["epochs"] = c.epochs;
  log["batch_size"] = c.batch_size;
  log["learning_rate"] = c.learning_rate;
  log["history"] = nlohmann::ordered_json::array();
  for (const auto& h : r.history)
    log["history"].push_back({{"epoch", h.epoch}, {"loss", h.loss}, {"learning_rate", h.learning_rate}});
  if (r.train_accuracy) log["train_accuracy"] = *r.train_accuracy;
  log["test_accuracy"] = r.test_accuracy;
  std::ofstream(dir / "train_log.json") << log.dump(2) << "\n";

  out << "test accuracy " << std::fixed << std::setprecision(4) << r.test_accuracy << "\n";
  if (r.train_accuracy) out << "train accuracy " << *r.train_accuracy << "\n";
  out << std::defaultfloat << "checkpoint " << (dir / "model.bin").string() << "\n";
  return kExitOk;
}

int run_eval(const EvalArgs& a, const CLI::App& cmd, std::ostream& out, std::ostream& err) {
  RunConfig c;
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw IoError("cannot read run config " + a.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    c = run_config_from_json(ss.str());
  }
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  if (given("--model")) c.model = a.model;
  if (given("--data")) c.dataset = a.data;
  if (given("--out") || c.output.empty()) c.output = a.out;
  if (given("--methods")) c.methods = a.methods;
  if (given("--metrics")) c.metrics = a.metrics;
  if (given("--layers")) c.layers = a.layers;
  if (given("--refine")) c.refine = a.refine;
  if (given("--refine-mode")) {
    c.refine = true;
    c.refine_modes.clear();
    for (const auto& m : a.refine_modes) c.refine_modes.push_back(parse_aggregation_mode(m));
  }
  if (given("--road-fractions")) c.road.fractions = a.road_fractions;
  if (given("--road-noise-std")) c.road.noise_std = a.road_noise_std;
  if (given("--road-noise-seed")) c.road.noise_seed = a.road_noise_seed;
  if (given("--limit")) c.limit = a.limit;
  if (given("--seed")) c.seed = a.seed;
  if (given("--model-id")) c.model_id = a.model_id;
  c.workers = a.workers > 0 ? a.workers : (a.config_path.empty() ? workers_from_env(1) : workers_from_env(c.workers));
  if (c.model.empty()) {
    err << "eval: --model is required (directly or via --config)\n";
    return kExitUsage;
  }
  if (c.dataset.empty()) {
    err << "eval: --data is required (directly or via --config)\n";
    return kExitUsage;
  }
  c.validate();

  std::size_t done = 0;
  const EvalSummary s = evaluate(c, [&](const MetricRecord&) {
    if (++done % 500 == 0) err << done << " records\n";
  });
  out << "images " << s.images << ", written " << s.written << ", skipped " << s.skipped << ", failed " << s.failed
      << "\n";
  if (!a.assert_invariants) return kExitOk;

  const auto records = read_records(c.output);
  const SummaryTable table = summarize(records);
  std::vector<InvariantCheck> checks;
  bool has_trivial = false, has_real = false;
  for (const auto& m : c.methods) (is_trivial_method(m) ? has_trivial : has_real) = true;
  if (has_trivial && has_real) checks = check_trivial_separation(table);
  const CorrelationTable corr = correlate(records);
  if (corr.find("arcc") && corr.find("ad")) checks.push_back(check_correlation_ordering(corr));
  if (c.refine) {
    const auto layers = load_checkpoint(resolve_checkpoint_path(c.model))->layer_list();
    checks.push_back(check_refine_direction(table, layers[select_layers(layers, c.layers).front()].name));
  }
  if (checks.empty()) {
    out << "no invariant applies to this run\n";
    return kExitOk;
  }
  return report_checks(checks, out) ? kExitOk : kExitInvariantFailed;
}

int run_correlate(const CorrelateArgs& a, std::ostream& out) {
  const auto records = read_records(a.results);
  const CorrelationTable t = correlate(records, a.against);
  print_correlations(t, out);
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + a.out);
    f << correlations_csv(t);
  }
  return kExitOk;
}

int run_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  const auto records = read_records(a.results);
  const ReportFiles files = report(records, correlate(records, a.against), a.out);
  for (const auto& w : files.warnings) err << "warning: " << w << "\n";
  out << "wrote " << files.summary_csv.string() << "\n" << "wrote " << files.correlations_csv.string() << "\n";
  for (const auto& p : files.plots) out << "wrote " << p.string() << "\n";
  return kExitOk;
}

int run_sanity(const SanityArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig c;
  c.model = a.model;
  c.dataset = a.data;
  c.limit = a.limit;
  c.seed = a.seed;
  c.workers = a.workers > 0 ? a.workers : workers_from_env(1);
  std::filesystem::path tmp;
  if (a.out.empty()) {
    tmp = std::filesystem::temp_directory_path() /
          ("camgauge-sanity-" + std::to_string(fnv1a64(a.model + "|" + a.data + "|" + std::to_string(a.seed)) % 1000000007) + ".jsonl");
    std::filesystem::remove(tmp);
    c.output = tmp;
  } else {
    c.output = a.out;
  }
  c.validate();
  std::size_t done = 0;
  evaluate(c, [&](const MetricRecord&) {
    if (++done % 500 == 0) err << done << " records\n";
  });
  const auto records = read_records(c.output);
  if (!tmp.empty()) std::filesystem::remove(tmp);
  const SummaryTable table = summarize(records);
  print_summary(table, out);
  return report_checks(check_trivial_separation(table), out) ? kExitOk : kExitInvariantFailed;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribution-map evaluation toolkit: synthetic data, classifier training, CAM metrics.", "camgauge"};
  app.require_subcommand(1);
  app.footer("Environment: CAMGAUGE_WORKERS sets the default worker count for every subcommand.");

  DatasetArgs ds;
  CLI::App* dataset = app.add_subcommand("dataset", "Dataset utilities");
  dataset->require_subcommand(1);
  CLI::App* gen = dataset->add_subcommand("gen", "Generate the synthetic shapes dataset");
  gen->add_option("--out", ds.out, "Output directory")->required();
  gen->add_option("--backgrounds", ds.backgrounds, "Directory of background PNGs");
  gen->add_option("--seed", ds.seed, "Global seed")->capture_default_str();
  gen->add_option("--train-per-class", ds.train_per_class, "Training samples per class")->capture_default_str();
  gen->add_option("--test-per-class", ds.test_per_class, "Test samples per class")->capture_default_str();
  gen->add_option("--image-size", ds.image_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--scale-min", ds.scale_min, "Smallest shape size in pixels")->capture_default_str();
  gen->add_option("--scale-max", ds.scale_max, "Largest shape size in pixels")->capture_default_str();
  gen->add_option("--background-contrast", ds.contrast, "Contrast of procedural backgrounds")->capture_default_str();
  gen->add_flag("--no-procedural-fallback", ds.no_fallback, "Fail instead of using procedural backgrounds");
  gen->add_option("--workers", ds.workers, "Worker threads (default: CAMGAUGE_WORKERS or 1)");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "Train the classifier and write a checkpoint");
  train->add_option("--data", tr.data, "Dataset directory")->required();
  train->add_option("--out", tr.out, "Checkpoint directory (model.bin, model.json, train_log.json)")->required();
  train->add_option("--seed", tr.seed, "Seed for initialization and data order")->capture_default_str();
  train->add_option("--epochs", tr.config.epochs, "Epochs")->capture_default_str();
  train->add_option("--batch-size", tr.config.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--lr", tr.config.learning_rate, "Peak learning rate")->capture_default_str();
  train->add_option("--weight-decay", tr.config.weight_decay, "Decoupled weight decay")->capture_default_str();
  train->add_option("--train-per-class", tr.config.train_per_class, "Use only this many samples per class (0: all)")
      ->capture_default_str();
  train->add_flag("--no-flip", tr.no_flip, "Disable horizontal-flip augmentation");
  train->add_flag("--no-rotate", tr.no_rotate, "Disable quarter-turn rotation augmentation");
  train->add_flag("--train-accuracy", tr.config.measure_train_accuracy, "Also report accuracy on the training set");
  train->add_option("--workers", tr.workers, "Worker threads (default: CAMGAUGE_WORKERS or 1)");

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "Compute metric records for methods x layers over the test split");
  eval->add_option("--config", ev.config_path, "JSON run config; flags given explicitly take precedence");
  eval->add_option("--model", ev.model, "Checkpoint file or directory");
  eval->add_option("--data", ev.data, "Dataset directory");
  eval->add_option("--out", ev.out, "Results log (JSONL, appended)")->capture_default_str();
  eval->add_option("--methods", ev.methods, "Comma-separated method ids (" + join(method_ids()) + ")")->delimiter(',');
  eval->add_option("--metrics", ev.metrics, "Comma-separated metric ids (" + join(metric_ids()) + ")")->delimiter(',');
  eval->add_option("--layers", ev.layers, "shallowest | deepest | all | comma-separated layer names")
      ->capture_default_str();
  eval->add_flag("--refine", ev.refine, "Also evaluate the refined variant of each CAM method");
  eval->add_option("--refine-mode", ev.refine_modes, "Aggregation: multiply | geometric | invexp (repeatable)")
      ->delimiter(',');
  eval->add_option("--road-fractions", ev.road_fractions, "ROAD perturbation fractions")->delimiter(',');
  eval->add_option("--road-noise-std", ev.road_noise_std, "Imputation noise standard deviation")->capture_default_str();
  eval->add_option("--road-noise-seed", ev.road_noise_seed, "Imputation noise seed")->capture_default_str();
  eval->add_option("--limit", ev.limit, "Evaluate only the first N test images (0: all)")->capture_default_str();
  eval->add_option("--seed", ev.seed, "Seed for stochastic methods")->capture_default_str();
  eval->add_option("--model-id", ev.model_id, "Model id written to records (default: checkpoint name)");
  eval->add_option("--workers", ev.workers, "Worker threads (default: CAMGAUGE_WORKERS or 1)");
  eval->add_flag("--assert", ev.assert_invariants, "Check the benchmark invariants; exit 1 if any fails");

  CorrelateArgs co;
  CLI::App* correlate_cmd = app.add_subcommand("correlate", "Correlate metrics with ground-truth similarity");
  correlate_cmd->add_option("--results", co.results, "Results log (JSONL)")->required();
  correlate_cmd->add_option("--against", co.against, "Reference metric")->capture_default_str();
  correlate_cmd->add_option("--out", co.out, "Write the table as CSV");

  ReportArgs rp;
  CLI::App* report_cmd = app.add_subcommand("report", "Write summary.csv, correlations.csv and plots");
  report_cmd->add_option("--results", rp.results, "Results log (JSONL)")->required();
  report_cmd->add_option("--out", rp.out, "Output directory")->required();
  report_cmd->add_option("--against", rp.against, "Reference metric for correlations")->capture_default_str();

  SanityArgs sa;
  CLI::App* sanity = app.add_subcommand("sanity", "Trivial-baseline separation check on a trained checkpoint");
  sanity->add_option("--model", sa.model, "Checkpoint file or directory")->required();
  sanity->add_option("--data", sa.data, "Dataset directory")->required();
  sanity->add_option("--limit", sa.limit, "Test images to evaluate")->capture_default_str();
  sanity->add_option("--seed", sa.seed, "Seed for stochastic methods")->capture_default_str();
  sanity->add_option("--out", sa.out, "Keep the results log at this path");
  sanity->add_option("--workers", sa.workers, "Worker threads (default: CAMGAUGE_WORKERS or 1)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const CLI::App* sub = &app; sub;) {
      const auto subs = sub->get_subcommands();
      sub = subs.empty() ? nullptr : subs.front();
      if (sub) target = sub;
    }
    out << (target == &app ? app.help("", CLI::AppFormatMode::All) + "\n" + gen->help() : target->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All) << "\n" << gen->help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_dataset(ds, out);
    if (train->parsed()) return run_train(tr, out, err);
    if (eval->parsed()) return run_eval(ev, *eval, out, err);
    if (correlate_cmd->parsed()) return run_correlate(co, out);
    if (report_cmd->parsed()) return run_report(rp, out, err);
    if (sanity->parsed()) return run_sanity(sa, out, err);
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LookupError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

}  // namespace camgauge
