#include "camgauge/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "camgauge/error.hpp"
#include "camgauge/plot.hpp"
#include "camgauge/png_io.hpp"
#include "camgauge/stats.hpp"

namespace camgauge {

namespace {

using json = nlohmann::ordered_json;

// Runs fn(i) for i in [0, n) on up to `workers` threads and rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = next++; i < n && !stop; i = next++) {
        try {
          fn(i, t);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          stop = true;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// Dataset split held in memory as 8-bit planes (channel-major).
struct LoadedSplit {
  int size = 0;
  std::vector<std::vector<std::uint8_t>> pixels;
  std::vector<int> labels;
};

LoadedSplit load_split(const std::filesystem::path& root, const DatasetManifest& manifest, Split split,
                       int per_class_limit) {
  LoadedSplit out;
  out.size = manifest.image_size;
  std::vector<int> taken(kNumShapeClasses, 0);
  for (const SampleRecord* rec : manifest.split(split)) {
    if (per_class_limit > 0 && taken[rec->class_id] >= per_class_limit) continue;
    ++taken[rec->class_id];
    const png::Raster r = png::read(root / rec->image_path);
    if (r.width != out.size || r.height != out.size) throw IoError("unexpected image size in " + rec->image_path);
    const std::size_t hw = static_cast<std::size_t>(r.width) * r.height;
    std::vector<std::uint8_t> planes(hw * 3);
    for (std::size_t i = 0; i < hw; ++i)
      for (int c = 0; c < 3; ++c) planes[c * hw + i] = r.data[i * 3 + c];
    out.pixels.push_back(std::move(planes));
    out.labels.push_back(rec->class_id);
  }
  return out;
}

// Augmentation code: bit 0 mirrors columns, bits 1-2 count quarter turns.
void to_input(const std::vector<std::uint8_t>& planes, int size, int code, std::vector<float>& out) {
  out.resize(planes.size());
  const std::size_t hw = static_cast<std::size_t>(size) * size;
  const bool flip = (code & 1) != 0;
  const int turns = (code >> 1) & 3;
  const int last = size - 1;
  for (int c = 0; c < 3; ++c) {
    const std::uint8_t* src = planes.data() + c * hw;
    float* dst = out.data() + c * hw;
    for (int r = 0; r < size; ++r)
      for (int x = 0; x < size; ++x) {
        int sr = r, sc = x;
        switch (turns) {
          case 1: sr = x, sc = last - r; break;
          case 2: sr = last - r, sc = last - x; break;
          case 3: sr = last - x, sc = r; break;
          default: break;
        }
        if (flip) sc = last - sc;
        dst[static_cast<std::size_t>(r) * size + x] = src[static_cast<std::size_t>(sr) * size + sc] * (1.0f / 255.0f);
      }
  }
}

Image to_image(const std::vector<std::uint8_t>& planes, int size) {
  Image img(3, size, size);
  auto px = img.pixels();
  for (std::size_t i = 0; i < planes.size(); ++i) px[i] = planes[i] / 255.0;
  return img;
}

double split_accuracy(Classifier& model, const LoadedSplit& data) {
  if (data.labels.empty()) return 0.0;
  constexpr std::size_t kBatch = 16;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.labels.size(); start += kBatch) {
    const std::size_t end = std::min(start + kBatch, data.labels.size());
    std::vector<Image> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(to_image(data.pixels[i], data.size));
    const auto logits = model.logits(batch);
    for (std::size_t i = start; i < end; ++i) {
      const auto& row = logits[i - start];
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == data.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.labels.size());
}

}  // namespace

// ---- training --------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidInput("epochs must be >= 1");
  if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidInput("learning_rate must be positive");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) throw InvalidInput("final_lr_fraction must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight_decay must be >= 0");
  if (train_per_class < 0) throw InvalidInput("train_per_class must be >= 0");
  if (workers < 1) throw InvalidInput("workers must be >= 1");
}

TrainResult train_classifier(const std::filesystem::path& dataset, const TrainConfig& config) {
  config.validate();
  const DatasetManifest manifest = load_manifest(dataset);
  const LoadedSplit train = load_split(dataset, manifest, Split::Train, config.train_per_class);
  if (train.labels.empty()) throw IoError("dataset has no training samples: " + dataset.string());

  SmallCnnConfig mc = config.model;
  mc.num_classes = kNumShapeClasses;
  mc.input_channels = 3;
  mc.input_size = manifest.image_size;
  mc.seed = derive_seed(config.seed, {fnv1a64("init")});
  TrainResult result;
  result.model = build_small_cnn(mc);
  SmallCnn& model = *result.model;

  const std::size_t n = train.labels.size();
  const std::size_t n_params = model.parameter_count();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const std::size_t warmup = std::max<std::size_t>(1, std::min(steps_per_epoch, total_steps / 10));
  constexpr std::size_t kChunk = 8;  // gradient micro-batch; fixes the summation order
  const std::size_t max_chunks = (config.batch_size + kChunk - 1) / kChunk;

  std::vector<float> m(n_params, 0.0f), v(n_params, 0.0f), grad(n_params);
  std::vector<std::vector<float>> chunk_grads(max_chunks, std::vector<float>(n_params));
  std::vector<double> chunk_loss(max_chunks);
  std::vector<std::vector<float>> inputs(std::max(1, config.workers));
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, {fnv1a64("epoch"), static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order.begin(), order.end());
    std::vector<std::uint8_t> augment(n, 0);
    for (auto& a : augment) {
      if (config.horizontal_flip && rng.uniform() < 0.5) a |= 1;
      if (config.rotate90) a |= static_cast<std::uint8_t>(rng.below(4) << 1);
    }

    double epoch_loss = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++step) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const double weight = 1.0 / static_cast<double>(end - start);
      const std::size_t chunks = (end - start + kChunk - 1) / kChunk;
      parallel_for(chunks, config.workers, [&](std::size_t ch, std::size_t worker) {
        auto& g = chunk_grads[ch];
        std::fill(g.begin(), g.end(), 0.0f);
        double loss = 0.0;
        for (std::size_t p = start + ch * kChunk; p < std::min(end, start + (ch + 1) * kChunk); ++p) {
          const std::size_t idx = order[p];
          to_input(train.pixels[idx], train.size, augment[p], inputs[worker]);
          loss += model.accumulate_gradient(inputs[worker], train.labels[idx], weight, g);
        }
        chunk_loss[ch] = loss;
      });
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t ch = 0; ch < chunks; ++ch) {
        const auto& g = chunk_grads[ch];
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += g[i];
        epoch_loss += chunk_loss[ch];
      }

      if (step < warmup) {
        lr = config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
      } else {
        const double t = static_cast<double>(step - warmup) / static_cast<double>(std::max<std::size_t>(1, total_steps - warmup));
        const double floor = config.final_lr_fraction;
        lr = config.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t)));
      }
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step + 1));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step + 1));
      auto params = model.parameters();
      for (std::size_t i = 0; i < n_params; ++i) {
        const double g = grad[i];
        m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * g);
        v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * g * g);
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
        params[i] = static_cast<float>(params[i] - lr * (update + config.weight_decay * params[i]));
      }
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.loss = epoch_loss / static_cast<double>(n);
    stats.learning_rate = lr;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(stats);
    if (config.on_epoch) config.on_epoch(stats);
  }

  if (config.measure_train_accuracy) result.train_accuracy = split_accuracy(model, train);
  const LoadedSplit test = load_split(dataset, manifest, Split::Test, 0);
  result.test_accuracy = split_accuracy(model, test);
  return result;
}

double classification_accuracy(Classifier& model, const std::filesystem::path& dataset, Split split,
                               int per_class_limit) {
  const DatasetManifest manifest = load_manifest(dataset);
  return split_accuracy(model, load_split(dataset, manifest, split, per_class_limit));
}

// ---- ground truth ----------------------------------------------------------

double cosine_similarity(std::span<const double> map, std::span<const double> ground_truth) {
  if (map.size() != ground_truth.size()) throw InvalidInput("cosine similarity: sizes differ");
  double dot = 0.0, nl = 0.0, ng = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    dot += map[i] * ground_truth[i];
    nl += map[i] * map[i];
    ng += ground_truth[i] * ground_truth[i];
  }
  if (ng == 0.0) throw InvalidInput("cosine similarity: ground truth is all zero");
  if (nl == 0.0) return 0.0;
  return dot / (std::sqrt(nl) * std::sqrt(ng));
}

double cosine_similarity(const AttributionMap& map, const BinaryMask& ground_truth) {
  if (map.rows() != ground_truth.rows || map.cols() != ground_truth.cols)
    throw InvalidInput("cosine similarity: map and mask differ in shape");
  const Grid g = ground_truth.to_grid();
  return cosine_similarity(map.values(), g.values());
}

// ---- run configuration -----------------------------------------------------

std::vector<int> select_layers(const LayerList& layers, std::string_view selector) {
  if (layers.empty()) throw InvalidInput("model exposes no layers");
  if (selector == "shallowest") return {0};
  if (selector == "deepest") return {static_cast<int>(layers.size()) - 1};
  std::vector<int> out;
  if (selector == "all") {
    for (const auto& l : layers) out.push_back(l.index);
    return out;
  }
  std::string rest(selector);
  std::stringstream ss(rest);
  std::string name;
  while (std::getline(ss, name, ','))
    if (!name.empty()) out.push_back(find_layer(layers, name).index);
  if (out.empty()) throw InvalidInput("empty layer selector");
  return out;
}

void RunConfig::validate() const {
  if (methods.empty()) throw InvalidInput("no methods requested");
  if (metrics.empty()) throw InvalidInput("no metrics requested");
  const auto& known = method_ids();
  for (const auto& m : methods)
    if (std::find(known.begin(), known.end(), m) == known.end()) throw LookupError("unknown method '" + m + "'");
  for (const auto& m : metrics) (void)parse_metric_id(m);
  if (refine && refine_modes.empty()) throw InvalidInput("refine enabled without aggregation modes");
  if (layers.empty()) throw InvalidInput("empty layer selector");
  if (limit < 0) throw InvalidInput("limit must be >= 0");
  if (workers < 1) throw InvalidInput("workers must be >= 1");
  road.validate();
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("run config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidInput("run config must be a JSON object");
  static const std::set<std::string> allowed{"dataset", "model",  "output", "methods", "metrics",
                                             "layers",  "refine", "refine_modes", "road", "limit",
                                             "seed",    "workers", "model_id"};
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw InvalidInput("unknown run config key '" + k + "'");
  RunConfig c;
  try {
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("model")) c.model = j["model"].get<std::string>();
    if (j.contains("output")) c.output = j["output"].get<std::string>();
    if (j.contains("methods")) c.methods = j["methods"].get<std::vector<std::string>>();
    if (j.contains("metrics")) c.metrics = j["metrics"].get<std::vector<std::string>>();
    if (j.contains("layers")) c.layers = j["layers"].get<std::string>();
    if (j.contains("refine")) c.refine = j["refine"].get<bool>();
    if (j.contains("refine_modes")) {
      c.refine_modes.clear();
      for (const auto& m : j["refine_modes"]) c.refine_modes.push_back(parse_aggregation_mode(m.get<std::string>()));
    }
    if (j.contains("road")) {
      const auto& r = j["road"];
      static const std::set<std::string> road_keys{"fractions", "direct_weight", "diagonal_weight", "noise_std",
                                                   "noise_seed"};
      for (const auto& [k, _] : r.items())
        if (!road_keys.count(k)) throw InvalidInput("unknown road config key '" + k + "'");
      if (r.contains("fractions")) c.road.fractions = r["fractions"].get<std::vector<double>>();
      if (r.contains("direct_weight")) c.road.direct_weight = r["direct_weight"].get<double>();
      if (r.contains("diagonal_weight")) c.road.diagonal_weight = r["diagonal_weight"].get<double>();
      if (r.contains("noise_std")) c.road.noise_std = r["noise_std"].get<double>();
      if (r.contains("noise_seed")) c.road.noise_seed = r["noise_seed"].get<std::uint64_t>();
    }
    if (j.contains("limit")) c.limit = j["limit"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("workers")) c.workers = j["workers"].get<int>();
    if (j.contains("model_id")) c.model_id = j["model_id"].get<std::string>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("run config has a malformed value: ") + e.what());
  }
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json modes = json::array();
  for (auto m : c.refine_modes) modes.push_back(std::string(to_string(m)));
  json j = {{"dataset", c.dataset.string()},
            {"model", c.model.string()},
            {"output", c.output.string()},
            {"methods", c.methods},
            {"metrics", c.metrics},
            {"layers", c.layers},
            {"refine", c.refine},
            {"refine_modes", modes},
            {"road",
             {{"fractions", c.road.fractions},
              {"direct_weight", c.road.direct_weight},
              {"diagonal_weight", c.road.diagonal_weight},
              {"noise_std", c.road.noise_std},
              {"noise_seed", c.road.noise_seed}}},
            {"limit", c.limit},
            {"seed", c.seed},
            {"workers", c.workers},
            {"model_id", c.model_id}};
  return j.dump(2) + "\n";
}

// ---- records ---------------------------------------------------------------

std::string record_to_json(const MetricRecord& r) {
  json j = {{"key", r.key()},           {"image_id", r.image_id},   {"model_id", r.model_id},
            {"method_id", r.method_id}, {"layer_id", r.layer_id},   {"metric_id", r.metric_id}};
  if (std::isfinite(r.value))
    j["value"] = r.value;
  else
    j["value"] = nullptr;
  j["degenerate"] = r.degenerate;
  return j.dump();
}

MetricRecord record_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    MetricRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.method_id = j.at("method_id").get<std::string>();
    r.layer_id = j.at("layer_id").get<std::string>();
    r.metric_id = j.at("metric_id").get<std::string>();
    const auto& v = j.at("value");
    r.value = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    r.degenerate = j.value("degenerate", false);
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed result record: ") + e.what());
  }
}

std::vector<MetricRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read results log " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const IoError& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------

namespace {

std::string default_model_id(const std::filesystem::path& model) {
  if (std::filesystem::is_directory(model)) {
    const auto p = model.lexically_normal();
    return (p.has_filename() ? p.filename() : p.parent_path().filename()).string();
  }
  return model.stem().string();
}

struct Variant {
  AttributionFunction fn;
  bool layer_dependent;
};

// Lazily computed metric components for one (image, method, layer).
class MetricContext {
 public:
  MetricContext(Classifier& model, const Image& image, const BinaryMask& gt, int cls, const AttributionFunction& fn,
                int layer, const RoadConfig& road, std::uint64_t image_key)
      : model_(model), image_(image), gt_(gt), cls_(cls), fn_(fn), layer_(layer), road_(road), key_(image_key) {}

  const AttributionMap& map() {
    if (!map_) map_ = fn_(model_, layer_, image_, cls_);
    return *map_;
  }
  double ad() {
    if (!ad_) ad_ = average_drop(model_, image_, map(), cls_);
    return *ad_;
  }
  double cmx() {
    if (!cmx_) cmx_ = complexity(map());
    return *cmx_;
  }
  const CoherencyResult& chn() {
    if (!chn_) chn_ = coherency(model_, image_, map(), cls_, fn_, layer_);
    return *chn_;
  }
  double road() {
    if (!road_score_) road_score_ = camgauge::road(model_, image_, map(), cls_, road_, key_);
    return *road_score_;
  }

  // Returns (value, degenerate).
  std::pair<double, bool> compute(MetricId id) {
    switch (id) {
      case MetricId::Ad:
        return {ad(), map().degenerate()};
      case MetricId::Cmx:
        return {cmx(), map().degenerate()};
      case MetricId::Chn:
        return {chn().value, map().degenerate() || chn().degenerate};
      case MetricId::Adcc:
        return {adcc(ad(), cmx(), chn().value), map().degenerate() || chn().degenerate};
      case MetricId::Road:
        return {road(), map().degenerate()};
      case MetricId::Arcc:
        return {arcc(chn().value, cmx(), road()), map().degenerate() || chn().degenerate};
      case MetricId::Cosine:
        return {cosine_similarity(map(), gt_), map().degenerate()};
    }
    throw InvalidInput("unhandled metric");
  }

 private:
  Classifier& model_;
  const Image& image_;
  const BinaryMask& gt_;
  int cls_;
  const AttributionFunction& fn_;
  int layer_;
  const RoadConfig& road_;
  std::uint64_t key_;
  std::optional<AttributionMap> map_;
  std::optional<double> ad_, cmx_, road_score_;
  std::optional<CoherencyResult> chn_;
};

}  // namespace

EvalSummary evaluate(const RunConfig& config, const std::function<void(const MetricRecord&)>& on_record) {
  config.validate();
  if (config.output.empty()) throw InvalidInput("evaluation needs an output path");
  const std::filesystem::path ckpt = resolve_checkpoint_path(config.model);
  const DatasetManifest manifest = load_manifest(config.dataset);
  std::vector<const SampleRecord*> samples = manifest.split(Split::Test);
  if (config.limit > 0 && samples.size() > static_cast<std::size_t>(config.limit)) samples.resize(config.limit);
  const std::string model_id = config.model_id.empty() ? default_model_id(config.model) : config.model_id;

  std::set<std::string> existing;
  if (std::filesystem::exists(config.output))
    for (const auto& r : read_records(config.output)) existing.insert(r.key());

  const int workers = std::max(1, std::min<int>(config.workers, static_cast<int>(std::max<std::size_t>(1, samples.size()))));
  std::vector<std::unique_ptr<SmallCnn>> models;
  for (int w = 0; w < workers; ++w) models.push_back(load_checkpoint(ckpt));
  const LayerList layers = models[0]->layer_list();
  const std::vector<int> layer_ids = select_layers(layers, config.layers);
  std::vector<MetricId> metric_list;
  for (const auto& m : config.metrics) metric_list.push_back(parse_metric_id(m));

  if (config.output.has_parent_path()) std::filesystem::create_directories(config.output.parent_path());
  std::ofstream log(config.output, std::ios::app);
  if (!log) throw IoError("cannot open results log " + config.output.string());

  EvalSummary summary;
  summary.images = samples.size();
  std::mutex commit_mutex;
  std::vector<std::optional<std::vector<MetricRecord>>> done(samples.size());
  std::size_t next_commit = 0;
  std::atomic<std::size_t> skipped{0}, failed{0};

  auto job = [&](std::size_t i, std::size_t worker) {
    SmallCnn& model = *models[worker];
    const SampleRecord& rec = *samples[i];
    const std::uint64_t image_key = fnv1a64(rec.id);
    std::vector<MetricRecord> out;
    std::optional<Image> image;
    std::optional<BinaryMask> gt;

    for (const auto& method : config.methods) {
      const AttributionFunction base =
          make_attribution(method, derive_seed(config.seed, {fnv1a64("method"), image_key}));
      std::vector<AttributionFunction> variants{base};
      if (config.refine && base.layer_dependent())
        for (auto mode : config.refine_modes) variants.push_back(make_refined(base, mode));
      for (const auto& fn : variants) {
        const std::vector<int> fn_layers = fn.layer_dependent() ? layer_ids : std::vector<int>{0};
        for (int layer : fn_layers) {
          const std::string layer_id = fn.layer_dependent() ? layers[layer].name : std::string(kInputLayerId);
          std::vector<MetricRecord> pending;
          for (MetricId id : metric_list) {
            MetricRecord r{rec.id, model_id, fn.id(), layer_id, std::string(to_string(id)), 0.0, false};
            if (existing.count(r.key())) {
              ++skipped;
              continue;
            }
            pending.push_back(std::move(r));
          }
          if (pending.empty()) continue;
          if (!image) {
            image = load_sample_image(config.dataset, rec);
            gt = load_sample_mask(config.dataset, rec);
          }
          MetricContext ctx(model, *image, *gt, rec.class_id, fn, layer, config.road, image_key);
          for (auto& r : pending) {
            try {
              std::tie(r.value, r.degenerate) = ctx.compute(parse_metric_id(r.metric_id));
            } catch (const std::exception& e) {
              r.value = std::numeric_limits<double>::quiet_NaN();
              r.degenerate = true;
              ++failed;
              std::cerr << "warning: " << r.image_id << " " << r.method_id << " " << r.layer_id << " "
                        << r.metric_id << ": " << e.what() << "\n";
            }
            out.push_back(std::move(r));
          }
        }
      }
    }

    std::lock_guard lock(commit_mutex);
    done[i] = std::move(out);
    while (next_commit < done.size() && done[next_commit]) {
      for (const auto& r : *done[next_commit]) {
        log << record_to_json(r) << '\n';
        ++summary.written;
        if (on_record) on_record(r);
      }
      log.flush();
      done[next_commit].reset();
      ++next_commit;
    }
  };
  parallel_for(samples.size(), workers, job);
  if (!log) throw IoError("failed writing results log " + config.output.string());
  summary.skipped = skipped;
  summary.failed = failed;
  return summary;
}

// ---- aggregation -----------------------------------------------------------

namespace {

std::size_t metric_rank(const std::string& metric) {
  const auto& ids = metric_ids();
  const auto it = std::find(ids.begin(), ids.end(), metric);
  return static_cast<std::size_t>(it - ids.begin());
}

std::size_t method_rank(const std::string& method) {
  const auto& ids = method_ids();
  const std::string base = method.substr(0, method.find('+'));
  const auto it = std::find(ids.begin(), ids.end(), base);
  return static_cast<std::size_t>(it - ids.begin());
}

std::string format_cell(const SummaryCell& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f \xC2\xB1 %.4f", c.mean, c.stddev);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

const SummaryRow* SummaryTable::find(std::string_view method, std::string_view layer, std::string_view model) const {
  for (const auto& row : rows)
    if (row.method_id == method && (layer.empty() || row.layer_id == layer) && (model.empty() || row.model_id == model))
      return &row;
  return nullptr;
}

std::optional<SummaryCell> SummaryTable::cell(std::string_view method, std::string_view metric,
                                              std::string_view layer, std::string_view model) const {
  const SummaryRow* row = find(method, layer, model);
  if (!row) return std::nullopt;
  const auto it = std::find(metrics.begin(), metrics.end(), metric);
  if (it == metrics.end()) return std::nullopt;
  return row->cells[static_cast<std::size_t>(it - metrics.begin())];
}

SummaryTable summarize(std::span<const MetricRecord> records) {
  using RowKey = std::tuple<std::string, std::size_t, std::string, std::string>;
  std::map<RowKey, std::map<std::string, std::vector<double>>> groups;
  std::set<std::string> all_metrics;
  for (const auto& r : records) {
    all_metrics.insert(r.metric_id);
    auto& values = groups[{r.model_id, method_rank(r.method_id), r.method_id, r.layer_id}][r.metric_id];
    if (std::isfinite(r.value)) values.push_back(r.value);
  }
  std::vector<std::string> ordered(all_metrics.begin(), all_metrics.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const std::string& a, const std::string& b) { return metric_rank(a) < metric_rank(b); });

  SummaryTable table;
  for (const auto& m : ordered) {
    bool any = false;
    for (const auto& [_, by_metric] : groups) {
      const auto it = by_metric.find(m);
      if (it != by_metric.end() && !it->second.empty()) any = true;
    }
    (any ? table.metrics : table.omitted).push_back(m);
  }
  for (const auto& [key, by_metric] : groups) {
    SummaryRow row{std::get<0>(key), std::get<2>(key), std::get<3>(key), {}};
    for (const auto& m : table.metrics) {
      const auto it = by_metric.find(m);
      if (it == by_metric.end() || it->second.empty()) {
        row.cells.emplace_back();
      } else {
        row.cells.push_back(SummaryCell{stats::mean(it->second), stats::stddev(it->second), it->second.size()});
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

bool lower_is_better(std::string_view metric) { return metric == "ad" || metric == "cmx"; }

const CorrelationEntry* CorrelationTable::find(std::string_view metric) const {
  for (const auto& e : entries)
    if (e.metric == metric) return &e;
  return nullptr;
}

CorrelationTable correlate(std::span<const MetricRecord> records, std::string_view against) {
  using PairKey = std::tuple<std::string, std::string, std::string>;  // image, method, layer
  std::map<std::string, std::map<PairKey, double>> reference;          // per model
  std::map<std::string, std::map<std::string, std::vector<std::pair<PairKey, double>>>> values;
  std::set<std::string> metrics;
  for (const auto& r : records) {
    if (!std::isfinite(r.value)) continue;
    const PairKey k{r.image_id, r.method_id, r.layer_id};
    if (r.metric_id == against) {
      reference[r.model_id][k] = r.value;
    } else {
      values[r.model_id][r.metric_id].emplace_back(k, r.value);
      metrics.insert(r.metric_id);
    }
  }
  std::vector<std::string> ordered(metrics.begin(), metrics.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const std::string& a, const std::string& b) { return metric_rank(a) < metric_rank(b); });

  CorrelationTable table;
  table.against = std::string(against);
  for (const auto& metric : ordered) {
    CorrelationEntry e;
    e.metric = metric;
    std::vector<double> pearsons, spearmans;
    for (const auto& [model, by_metric] : values) {
      const auto it = by_metric.find(metric);
      if (it == by_metric.end()) continue;
      const auto& ref = reference[model];
      std::vector<double> x, y;
      for (const auto& [k, v] : it->second) {
        const auto r = ref.find(k);
        if (r == ref.end()) continue;
        x.push_back(lower_is_better(metric) ? -v : v);
        y.push_back(r->second);
      }
      ++e.models;
      e.pairs += x.size();
      if (x.size() < 3) {
        e.reason = "fewer than 3 paired observations for model " + model;
        pearsons.clear();
        break;
      }
      const auto p = stats::pearson(x, y);
      const auto s = stats::spearman(x, y);
      if (!p || !s) {
        e.reason = "constant series for model " + model;
        pearsons.clear();
        break;
      }
      pearsons.push_back(*p);
      spearmans.push_back(*s);
    }
    if (e.models == 0 && e.reason.empty()) e.reason = "no paired observations";
    if (e.reason.empty() && !pearsons.empty()) {
      e.defined = true;
      e.pearson = stats::mean(pearsons);
      e.pearson_std = stats::stddev(pearsons);
      e.spearman = stats::mean(spearmans);
      e.spearman_std = stats::stddev(spearmans);
    }
    table.entries.push_back(std::move(e));
  }
  return table;
}

std::string summary_csv(const SummaryTable& table) {
  std::string out = "model,method,layer";
  for (const auto& m : table.metrics) out += "," + csv_field(m);
  out += "\n";
  for (const auto& row : table.rows) {
    out += csv_field(row.model_id) + "," + csv_field(row.method_id) + "," + csv_field(row.layer_id);
    for (const auto& c : row.cells) out += "," + (c ? format_cell(*c) : std::string());
    out += "\n";
  }
  return out;
}

std::string correlations_csv(const CorrelationTable& table) {
  std::string out = "metric,against,pearson_mean,pearson_std,spearman_mean,spearman_std,models,pairs,note\n";
  for (const auto& e : table.entries) {
    char buf[160];
    if (e.defined) {
      std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f", e.pearson, e.pearson_std, e.spearman, e.spearman_std);
    } else {
      std::snprintf(buf, sizeof buf, ",,,");
    }
    out += csv_field(e.metric) + "," + csv_field(table.against) + "," + buf + "," + std::to_string(e.models) + "," +
           std::to_string(e.pairs) + "," + csv_field(e.defined ? std::string() : "undefined: " + e.reason) + "\n";
  }
  return out;
}

ReportFiles report(std::span<const MetricRecord> records, const CorrelationTable& correlations,
                   const std::filesystem::path& out_dir) {
  if (records.empty()) throw InvalidInput("report needs at least one record");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create report directory " + out_dir.string());

  ReportFiles files;
  const SummaryTable table = summarize(records);
  for (const auto& m : table.omitted) files.warnings.push_back("metric '" + m + "' has no finite values; column omitted");
  for (const auto& e : correlations.entries)
    if (!e.defined) files.warnings.push_back("correlation of '" + e.metric + "' is undefined: " + e.reason);

  auto write_text = [&](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
  };
  files.summary_csv = out_dir / "summary.csv";
  write_text(files.summary_csv, summary_csv(table));
  files.correlations_csv = out_dir / "correlations.csv";
  write_text(files.correlations_csv, correlations_csv(correlations));

  // One panel per metric with a bar per (method, layer) row.
  std::vector<plot::BarPanel> panels;
  for (std::size_t m = 0; m < table.metrics.size(); ++m) {
    plot::BarPanel panel;
    panel.title = table.metrics[m];
    plot::Series series;
    for (const auto& row : table.rows) {
      std::string label = row.method_id;
      if (row.layer_id != kInputLayerId) label += "@" + row.layer_id;
      panel.categories.push_back(label);
      series.values.push_back(row.cells[m] ? row.cells[m]->mean : 0.0);
      series.errors.push_back(row.cells[m] ? row.cells[m]->stddev : 0.0);
    }
    panel.series.push_back(std::move(series));
    panels.push_back(std::move(panel));
  }
  if (!panels.empty()) {
    files.plots.push_back(out_dir / "metrics.png");
    png::write(files.plots.back(), png::to_raster(plot::render_bar_panels(panels, 2)));
  }

  plot::BarPanel corr;
  corr.title = "correlation with " + correlations.against;
  plot::Series pearson{"pearson", {}, {}}, spearman{"spearman", {}, {}};
  for (const auto& e : correlations.entries) {
    if (!e.defined) continue;
    corr.categories.push_back(e.metric);
    pearson.values.push_back(e.pearson);
    pearson.errors.push_back(e.pearson_std);
    spearman.values.push_back(e.spearman);
    spearman.errors.push_back(e.spearman_std);
  }
  if (!corr.categories.empty()) {
    corr.series = {pearson, spearman};
    files.plots.push_back(out_dir / "correlations.png");
    png::write(files.plots.back(), png::to_raster(plot::render_bar_panels({&corr, 1}, 1)));
  }
  return files;
}

// ---- invariant checks ------------------------------------------------------

namespace {

const std::vector<std::string>& real_methods() {
  static const std::vector<std::string> ids{"gradcam", "layercam", "scorecam"};
  return ids;
}
const std::vector<std::string>& trivial_methods() {
  static const std::vector<std::string> ids{"random", "half", "all1s"};
  return ids;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::vector<InvariantCheck> check_trivial_separation(const SummaryTable& table) {
  std::vector<InvariantCheck> out;
  for (const std::string metric : {"arcc", "road"}) {
    InvariantCheck check{"trivial " + metric + " below real methods", true, ""};
    std::vector<std::pair<std::string, double>> real, trivial;
    for (const auto& row : table.rows) {
      const auto c = table.cell(row.method_id, metric, row.layer_id, row.model_id);
      if (!c) continue;
      const std::string name = row.method_id + "@" + row.layer_id;
      if (std::find(real_methods().begin(), real_methods().end(), row.method_id) != real_methods().end())
        real.emplace_back(name, c->mean);
      if (std::find(trivial_methods().begin(), trivial_methods().end(), row.method_id) != trivial_methods().end())
        trivial.emplace_back(name, c->mean);
    }
    if (real.empty() || trivial.empty()) {
      check.passed = false;
      check.detail = "missing real or trivial rows for " + metric;
    }
    for (const auto& [tn, tv] : trivial)
      for (const auto& [rn, rv] : real)
        if (!(tv < rv)) {
          check.passed = false;
          check.detail += tn + " (" + fmt(tv) + ") >= " + rn + " (" + fmt(rv) + "); ";
        }
    out.push_back(std::move(check));
  }
  InvariantCheck ad{"all1s mean ad == 0", false, ""};
  if (const auto c = table.cell("all1s", "ad")) {
    ad.passed = c->mean == 0.0;
    ad.detail = "mean ad = " + fmt(c->mean);
  } else {
    ad.detail = "no all1s ad values";
  }
  out.push_back(std::move(ad));
  return out;
}

InvariantCheck check_correlation_ordering(const CorrelationTable& table) {
  InvariantCheck check{"pearson(arcc) > pearson(ad)", false, ""};
  const auto* a = table.find("arcc");
  const auto* d = table.find("ad");
  if (!a || !d || !a->defined || !d->defined) {
    check.detail = "arcc or ad correlation unavailable";
    return check;
  }
  check.passed = a->pearson > d->pearson;
  check.detail = "arcc " + fmt(a->pearson) + " vs ad " + fmt(d->pearson);
  return check;
}

InvariantCheck check_refine_direction(const SummaryTable& table, std::string_view layer) {
  InvariantCheck check{"refined arcc >= base arcc for 2 of 3 methods", false, ""};
  int wins = 0;
  for (const auto& m : real_methods()) {
    const auto base = table.cell(m, "arcc", layer);
    const auto refined = table.cell(m + "+refine", "arcc", layer);
    if (!base || !refined) {
      check.detail += m + ": missing; ";
      continue;
    }
    if (refined->mean >= base->mean) ++wins;
    check.detail += m + ": " + fmt(base->mean) + " -> " + fmt(refined->mean) + "; ";
  }
  check.passed = wins >= 2;
  return check;
}

}  // namespace camgauge
