#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "camgauge/bench.hpp"
#include "camgauge/error.hpp"

using namespace camgauge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("camgauge_bench_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 64x64 dataset with 10 training and 2 test images per class, generated once.
const fs::path& tiny_dataset() {
  static const fs::path root = [] {
    const fs::path p = scratch("data");
    DatasetConfig cfg;
    cfg.out = p;
    cfg.seed = 7;
    cfg.train_per_class = 10;
    cfg.test_per_class = 2;
    cfg.generator.image_size = 64;
    cfg.generator.scale_min = 12;
    cfg.generator.scale_max = 32;
    cfg.procedural_train_backgrounds = 4;
    cfg.procedural_test_backgrounds = 2;
    generate_dataset(cfg);
    return p;
  }();
  return root;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig c;
  c.model.stem_width = 8;
  c.model.stage_widths = {8, 8, 16, 16};
  c.epochs = epochs;
  c.batch_size = 16;
  c.seed = 3;
  return c;
}

// Checkpoint of a briefly trained tiny model, written once.
const fs::path& tiny_checkpoint() {
  static const fs::path path = [] {
    const fs::path dir = scratch("ckpt");
    fs::create_directories(dir);
    const TrainResult r = train_classifier(tiny_dataset(), tiny_train(2));
    save_checkpoint(*r.model, class_names(), dir / "model.bin");
    return dir / "model.bin";
  }();
  return path;
}

MetricRecord rec(std::string image, std::string method, std::string metric, double value,
                 std::string model = "m", std::string layer = "stage1") {
  return {std::move(image), std::move(model), std::move(method), std::move(layer), std::move(metric), value, false};
}

}  // namespace

TEST_SUITE("bench") {
  TEST_CASE("cosine similarity examples") {
    const std::vector<double> a{0.2, 0.0, 0.7}, disjoint{0.0, 1.0, 0.0};
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, disjoint) == 0.0);
    CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 1}) ==
          doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 1}) == 0.0);
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 0}), InvalidInput);
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1}), InvalidInput);
  }

  TEST_CASE("correlation of identical and reversed series") {
    std::vector<MetricRecord> records;
    const std::vector<double> cos{0.1, 0.5, 0.3, 0.9, 0.7};
    for (std::size_t i = 0; i < cos.size(); ++i) {
      const std::string id = "img" + std::to_string(i);
      records.push_back(rec(id, "gradcam", "cosine", cos[i]));
      records.push_back(rec(id, "gradcam", "arcc", cos[i]));
      records.push_back(rec(id, "gradcam", "chn", 1.0 - cos[i]));
      records.push_back(rec(id, "gradcam", "road", std::exp(5.0 * cos[i])));
      records.push_back(rec(id, "gradcam", "cmx", 0.4));
    }
    const CorrelationTable t = correlate(records);
    REQUIRE(t.find("arcc"));
    CHECK(t.find("arcc")->pearson == doctest::Approx(1.0));
    CHECK(t.find("arcc")->spearman == doctest::Approx(1.0));
    CHECK(t.find("chn")->spearman == doctest::Approx(-1.0));
    CHECK(t.find("road")->spearman == doctest::Approx(1.0));
    CHECK(t.find("road")->pearson < 1.0);
    CHECK_FALSE(t.find("cmx")->defined);
    CHECK(t.find("arcc")->pairs == 5);
  }

  TEST_CASE("lower-is-better metrics are negated before correlating") {
    std::vector<MetricRecord> records;
    for (int i = 0; i < 4; ++i) {
      const std::string id = "img" + std::to_string(i);
      records.push_back(rec(id, "gradcam", "cosine", i));
      records.push_back(rec(id, "gradcam", "ad", -i));
    }
    CHECK(lower_is_better("ad"));
    CHECK(lower_is_better("cmx"));
    CHECK_FALSE(lower_is_better("arcc"));
    CHECK(correlate(records).find("ad")->pearson == doctest::Approx(1.0));
  }

  TEST_CASE("correlations are averaged across models") {
    std::vector<MetricRecord> records;
    for (int i = 0; i < 4; ++i) {
      const std::string id = "img" + std::to_string(i);
      records.push_back(rec(id, "gradcam", "cosine", i, "a"));
      records.push_back(rec(id, "gradcam", "arcc", i, "a"));
      records.push_back(rec(id, "gradcam", "cosine", i, "b"));
      records.push_back(rec(id, "gradcam", "arcc", 3 - i, "b"));
    }
    const CorrelationEntry* e = correlate(records).find("arcc");
    REQUIRE(e);
    CHECK(e->models == 2);
    CHECK(e->pearson == doctest::Approx(0.0));
    CHECK(e->pearson_std == doctest::Approx(1.0));
  }

  TEST_CASE("summary of two methods and two metrics") {
    std::vector<MetricRecord> records;
    for (const char* method : {"gradcam", "random"})
      for (int i = 0; i < 3; ++i) {
        const std::string id = "img" + std::to_string(i);
        records.push_back(rec(id, method, "ad", 0.1 * i));
        records.push_back(rec(id, method, "arcc", 0.2 * i));
      }
    const SummaryTable t = summarize(records);
    CHECK(t.metrics == std::vector<std::string>{"ad", "arcc"});
    REQUIRE(t.rows.size() == 2);
    int cells = 0;
    for (const auto& row : t.rows)
      for (const auto& c : row.cells) cells += c.has_value();
    CHECK(cells == 4);
    const auto c = t.cell("gradcam", "arcc");
    REQUIRE(c);
    CHECK(c->mean == doctest::Approx(0.2));
    CHECK(c->stddev == doctest::Approx(std::sqrt(0.08 / 3.0)));
    CHECK(c->count == 3);
  }

  TEST_CASE("report omits empty columns and is byte-identical across runs") {
    std::vector<MetricRecord> records;
    for (const char* method : {"gradcam", "half"})
      for (int i = 0; i < 4; ++i) {
        const std::string id = "img" + std::to_string(i);
        records.push_back(rec(id, method, "cosine", 0.1 * i + (method[0] == 'g' ? 0.3 : 0.0)));
        records.push_back(rec(id, method, "arcc", 0.05 * i * i));
        MetricRecord bad = rec(id, method, "road", std::nan(""));
        bad.degenerate = true;
        records.push_back(bad);
      }
    const fs::path a = scratch("report_a"), b = scratch("report_b");
    const CorrelationTable corr = correlate(records);
    const ReportFiles fa = report(records, corr, a);
    const ReportFiles fb = report(records, corr, b);
    CHECK(slurp(fa.summary_csv) == slurp(fb.summary_csv));
    CHECK(slurp(fa.correlations_csv) == slurp(fb.correlations_csv));
    CHECK(slurp(fa.summary_csv).find("road") == std::string::npos);
    REQUIRE_FALSE(fa.warnings.empty());
    CHECK(fa.warnings.front().find("road") != std::string::npos);
    for (const auto& p : fa.plots) CHECK(fs::file_size(p) > 0);
    CHECK_THROWS_AS(report(std::vector<MetricRecord>{}, corr, a), InvalidInput);
  }

  TEST_CASE("record json round trip keeps nan as null") {
    MetricRecord r = rec("img0", "gradcam+refine", "road", 0.25);
    CHECK(record_from_json(record_to_json(r)).value == 0.25);
    r.value = std::nan("");
    r.degenerate = true;
    const std::string line = record_to_json(r);
    CHECK(line.find("null") != std::string::npos);
    const MetricRecord back = record_from_json(line);
    CHECK(std::isnan(back.value));
    CHECK(back.degenerate);
    CHECK(back.key() == r.key());
  }

  TEST_CASE("run config json round trip and validation") {
    RunConfig c;
    c.dataset = "d";
    c.model = "m";
    c.methods = {"gradcam", "all1s"};
    c.refine = true;
    c.road.fractions = {0.1, 0.5};
    const RunConfig back = run_config_from_json(run_config_to_json(c));
    CHECK(back.methods == c.methods);
    CHECK(back.refine);
    CHECK(back.road.fractions == c.road.fractions);
    CHECK_THROWS(run_config_from_json(R"({"methods": ["gradcam"], "colour": 1})"));
    RunConfig bad = c;
    bad.methods = {"gradcam++"};
    CHECK_THROWS_AS(bad.validate(), LookupError);
  }

  TEST_CASE("layer selectors") {
    const LayerList layers{{"stage1", 0, 8, 16, 16}, {"stage2", 1, 8, 8, 8}, {"stage3", 2, 8, 4, 4}};
    CHECK(select_layers(layers, "shallowest") == std::vector<int>{0});
    CHECK(select_layers(layers, "deepest") == std::vector<int>{2});
    CHECK(select_layers(layers, "all") == std::vector<int>{0, 1, 2});
    CHECK(select_layers(layers, "stage3,stage1") == std::vector<int>{2, 0});
    CHECK_THROWS_AS(select_layers(layers, "stage9"), LookupError);
  }

  TEST_CASE("invariant checks on hand-built tables") {
    std::vector<MetricRecord> records;
    for (int i = 0; i < 3; ++i) {
      const std::string id = "img" + std::to_string(i);
      for (const char* m : {"gradcam", "layercam", "scorecam"}) {
        records.push_back(rec(id, m, "arcc", 0.5));
        records.push_back(rec(id, m, "road", 0.3));
        records.push_back(rec(id, std::string(m) + "+refine", "arcc", m[0] == 's' ? 0.4 : 0.6));
      }
      for (const char* m : {"random", "half", "all1s"}) {
        records.push_back(rec(id, m, "arcc", 0.1, "m", "input"));
        records.push_back(rec(id, m, "road", 0.1, "m", "input"));
      }
      records.push_back(rec(id, "all1s", "ad", 0.0, "m", "input"));
    }
    const SummaryTable t = summarize(records);
    for (const auto& c : check_trivial_separation(t)) CHECK_MESSAGE(c.passed, c.name);
    CHECK(check_refine_direction(t, "stage1").passed);
    records.push_back(rec("img9", "all1s", "ad", 0.01, "m", "input"));
    const auto checks = check_trivial_separation(summarize(records));
    CHECK_FALSE(checks.back().passed);
  }

  TEST_CASE("training with the same seed gives identical weights") {
    const TrainResult a = train_classifier(tiny_dataset(), tiny_train(1));
    const TrainResult b = train_classifier(tiny_dataset(), tiny_train(1));
    TrainConfig two_workers = tiny_train(1);
    two_workers.workers = 2;
    const TrainResult c = train_classifier(tiny_dataset(), two_workers);
    const auto pa = a.model->parameters(), pb = b.model->parameters(), pc = c.model->parameters();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
    CHECK(std::equal(pa.begin(), pa.end(), pc.begin(), pc.end()));
    TrainConfig other = tiny_train(1);
    other.seed = 4;
    const auto po = train_classifier(tiny_dataset(), other).model->parameters();
    CHECK_FALSE(std::equal(pa.begin(), pa.end(), po.begin(), po.end()));
  }

  TEST_CASE("sixty images are memorised in fifty epochs") {
    TrainConfig c = tiny_train(50);
    c.model.stem_width = 16;
    c.model.stage_widths = {16, 16, 32, 32};
    c.learning_rate = 1e-3;
    c.horizontal_flip = false;
    c.rotate90 = false;
    c.train_per_class = 10;
    c.measure_train_accuracy = true;
    const TrainResult r = train_classifier(tiny_dataset(), c);
    REQUIRE(r.train_accuracy);
    CHECK(*r.train_accuracy == 1.0);
    CHECK(r.history.back().loss < r.history.front().loss);
  }

  TEST_CASE("training rejects a missing dataset and bad configs") {
    CHECK_THROWS_AS(train_classifier(scratch("missing"), tiny_train(1)), IoError);
    TrainConfig c = tiny_train(0);
    CHECK_THROWS_AS(c.validate(), InvalidInput);
  }

  TEST_CASE("evaluate writes one record per image, method and metric, then resumes") {
    const fs::path out = scratch("eval") / "results.jsonl";
    RunConfig c;
    c.dataset = tiny_dataset();
    c.model = tiny_checkpoint();
    c.output = out;
    c.methods = {"gradcam", "layercam"};
    c.limit = 10;
    c.road.fractions = {0.2, 0.6};
    EvalSummary s = evaluate(c);
    CHECK(s.images == 10);
    CHECK(s.written == 140);
    CHECK(read_records(out).size() == 140);
    s = evaluate(c);
    CHECK(s.written == 0);
    CHECK(s.skipped == 140);
    CHECK(read_records(out).size() == 140);

    c.workers = 2;
    c.output = scratch("eval2") / "results.jsonl";
    evaluate(c);
    CHECK(slurp(c.output) == slurp(out));
  }

  TEST_CASE("evaluate scores all1s near zero average drop") {
    RunConfig c;
    c.dataset = tiny_dataset();
    c.model = tiny_checkpoint();
    c.output = scratch("eval_all1s") / "results.jsonl";
    c.methods = {"all1s"};
    c.metrics = {"ad", "cmx"};
    c.limit = 6;
    evaluate(c);
    const auto records = read_records(c.output);
    CHECK(records.size() == 12);
    for (const auto& r : records) {
      CHECK(r.layer_id == kInputLayerId);
      if (r.metric_id == "ad") CHECK(r.value < 0.01);
      if (r.metric_id == "cmx") CHECK(r.value == doctest::Approx(1.0 - 1.0 / (64.0 * 64.0)));
    }
  }

  TEST_CASE("evaluate rejects unknown ids") {
    RunConfig c;
    c.dataset = tiny_dataset();
    c.model = tiny_checkpoint();
    c.output = scratch("eval_bad") / "results.jsonl";
    c.metrics = {"auc"};
    CHECK_THROWS_AS(evaluate(c), LookupError);
  }
}
