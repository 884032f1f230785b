#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "camgauge/metrics.hpp"
#include "camgauge/model.hpp"
#include "camgauge/refinecam.hpp"
#include "camgauge/synthdata.hpp"

namespace camgauge {

// ---- training --------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainConfig {
  SmallCnnConfig model;  // num_classes and input_size are taken from the dataset
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double final_lr_fraction = 0.02;  // cosine decay floor
  double weight_decay = 1e-4;       // decoupled (AdamW)
  bool horizontal_flip = true;
  bool rotate90 = true;  // random multiples of 90 degrees; the shape classes are rotation invariant
  int train_per_class = 0;  // 0 uses the whole train split
  bool measure_train_accuracy = false;
  std::uint64_t seed = 0;
  int workers = 1;
  std::function<void(const EpochStats&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  std::unique_ptr<SmallCnn> model;
  std::vector<EpochStats> history;
  std::optional<double> train_accuracy;
  double test_accuracy = 0.0;
};

/// Trains the small CNN on <dataset>/train and reports accuracy on
/// <dataset>/test. Initialization, data order and augmentation are derived from
/// config.seed; gradients are reduced in a fixed order, so the final weights
/// do not depend on the worker count. Throws IoError for a missing dataset.
TrainResult train_classifier(const std::filesystem::path& dataset, const TrainConfig& config);

/// Fraction of samples of `split` classified correctly.
double classification_accuracy(Classifier& model, const std::filesystem::path& dataset, Split split,
                               int per_class_limit = 0);

// ---- ground truth ----------------------------------------------------------

/// (L . G) / (|L| |G|); an all-zero L scores 0. Throws InvalidInput for an
/// all-zero G or mismatched sizes.
double cosine_similarity(std::span<const double> map, std::span<const double> ground_truth);
double cosine_similarity(const AttributionMap& map, const BinaryMask& ground_truth);

// ---- evaluation ------------------------------------------------------------

struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path model;   // checkpoint file or directory holding model.bin
  std::filesystem::path output;  // results.jsonl
  std::vector<std::string> methods{"gradcam", "layercam", "scorecam", "random", "half", "all1s"};
  std::vector<std::string> metrics{"ad", "cmx", "chn", "adcc", "road", "arcc", "cosine"};
  /// shallowest | deepest | all | comma-separated layer names.
  std::string layers = "shallowest";
  bool refine = false;
  std::vector<AggregationMode> refine_modes{AggregationMode::Multiply};
  RoadConfig road;
  int limit = 0;  // 0 evaluates the whole test split
  std::uint64_t seed = 0;
  int workers = 1;
  std::string model_id;  // defaults to the checkpoint stem

  /// Checks ids against the registries. Throws LookupError / InvalidInput.
  void validate() const;
};

/// Reads a JSON object whose keys mirror the RunConfig fields (road settings
/// nested under "road"). Unknown keys are rejected.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);

struct EvalSummary {
  std::size_t images = 0;
  std::size_t written = 0;
  std::size_t skipped = 0;  // already present in the log
  std::size_t failed = 0;   // computation threw; logged as degenerate with a null value
};

/// Computes every requested metric for each test image x method (x refined
/// variant) x layer and appends the records to config.output. Records already
/// present (by key) are skipped. The class explained is the ground-truth label.
/// Images are processed in parallel but committed in dataset order.
EvalSummary evaluate(const RunConfig& config, const std::function<void(const MetricRecord&)>& on_record = {});

std::string record_to_json(const MetricRecord& record);
MetricRecord record_from_json(const std::string& line);
/// Reads a JSONL log; blank lines are ignored. Throws IoError on malformed lines.
std::vector<MetricRecord> read_records(const std::filesystem::path& path);

// ---- aggregation -----------------------------------------------------------

struct SummaryCell {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t count = 0;
};

struct SummaryRow {
  std::string model_id;
  std::string method_id;
  std::string layer_id;
  std::vector<std::optional<SummaryCell>> cells;  // aligned with SummaryTable::metrics
};

struct SummaryTable {
  std::vector<std::string> metrics;  // columns with at least one finite value
  std::vector<std::string> omitted;  // requested columns with no finite value
  std::vector<SummaryRow> rows;

  const SummaryRow* find(std::string_view method, std::string_view layer = {}, std::string_view model = {}) const;
  std::optional<SummaryCell> cell(std::string_view method, std::string_view metric, std::string_view layer = {},
                                  std::string_view model = {}) const;
};

/// Mean and standard deviation over images per (model, method, layer, metric).
/// Records with a non-finite value are ignored.
SummaryTable summarize(std::span<const MetricRecord> records);

struct CorrelationEntry {
  std::string metric;
  bool defined = false;
  std::string reason;  // why the correlation is undefined
  double pearson = 0.0;
  double spearman = 0.0;
  double pearson_std = 0.0;   // across models
  double spearman_std = 0.0;  // across models
  std::size_t models = 0;
  std::size_t pairs = 0;  // paired observations over all models
};

struct CorrelationTable {
  std::string against = "cosine";
  std::vector<CorrelationEntry> entries;

  const CorrelationEntry* find(std::string_view metric) const;
};

/// Metrics where a lower value means a better explanation (ad, cmx). Their
/// values are negated before correlating so every coefficient reads
/// "higher agrees with the ground truth".
bool lower_is_better(std::string_view metric);

/// Pearson and Spearman of each metric against `against`, pairing records by
/// (image, method, layer) and pooling every method within a model; reported as
/// mean and standard deviation across models. A metric with fewer than 3 pairs
/// or a constant series in some model is reported as undefined.
CorrelationTable correlate(std::span<const MetricRecord> records, std::string_view against = "cosine");

struct ReportFiles {
  std::filesystem::path summary_csv;
  std::filesystem::path correlations_csv;
  std::vector<std::filesystem::path> plots;
  std::vector<std::string> warnings;
};

/// Writes summary.csv, correlations.csv, metrics.png and correlations.png to
/// out_dir. Throws InvalidInput for empty records, IoError if out_dir is unwritable.
ReportFiles report(std::span<const MetricRecord> records, const CorrelationTable& correlations,
                   const std::filesystem::path& out_dir);

std::string summary_csv(const SummaryTable& table);
std::string correlations_csv(const CorrelationTable& table);

// ---- invariant checks ------------------------------------------------------

struct InvariantCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Mean ARCC and ROAD of each trivial baseline below every real CAM method,
/// and mean AD of all1s equal to 0.
std::vector<InvariantCheck> check_trivial_separation(const SummaryTable& table);
/// Pearson(ARCC, cosine) > Pearson(AD, cosine).
InvariantCheck check_correlation_ordering(const CorrelationTable& table);
/// Refined ARCC >= base ARCC for at least 2 of the real CAM methods at `layer`.
InvariantCheck check_refine_direction(const SummaryTable& table, std::string_view layer);

/// Layer id used for layer-independent methods.
inline constexpr std::string_view kInputLayerId = "input";

/// Resolves a layer selector against a model's layer list.
std::vector<int> select_layers(const LayerList& layers, std::string_view selector);

}  // namespace camgauge
