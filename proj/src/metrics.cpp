#include "camgauge/metrics.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "camgauge/error.hpp"
#include "camgauge/rng.hpp"
#include "camgauge/stats.hpp"

namespace camgauge {

void RoadConfig::validate() const {
  if (fractions.empty()) throw InvalidInput("ROAD needs at least one perturbation fraction");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] < 1.0)) throw InvalidInput("ROAD fractions must lie in (0, 1)");
    if (i > 0 && !(fractions[i] > fractions[i - 1])) throw InvalidInput("ROAD fractions must be sorted ascending");
  }
  if (!(direct_weight > 0.0) || !(diagonal_weight > 0.0)) throw InvalidInput("imputation weights must be positive");
  if (!(noise_std >= 0.0)) throw InvalidInput("noise_std must be >= 0");
}

std::size_t PixelMask::count() const {
  return static_cast<std::size_t>(std::count(removed.begin(), removed.end(), std::uint8_t{1}));
}

PixelMask perturbation_mask(const PixelRanking& ranking, std::size_t count) {
  PixelMask mask(ranking.rows, ranking.cols);
  count = std::min(count, ranking.flat.size());
  for (std::size_t i = 0; i < count; ++i) mask.removed[ranking.flat[i]] = 1;
  return mask;
}

std::size_t perturbed_count(double fraction, std::size_t pixels) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pixels)));
}

Image noisy_linear_imputation(const Image& image, const PixelMask& mask, const RoadConfig& config,
                              std::uint64_t noise_stream) {
  const int h = image.height();
  const int w = image.width();
  if (mask.rows != h || mask.cols != w) throw InvalidInput("imputation mask does not match image size");
  const std::size_t n_pixels = image.plane_size();

  std::vector<int> unknown_index(n_pixels, -1);
  int n = 0;
  for (std::size_t i = 0; i < n_pixels; ++i)
    if (mask.removed[i]) unknown_index[i] = n++;
  if (static_cast<std::size_t>(n) == n_pixels) throw InvalidInput("cannot impute a fully masked image");

  Image out = image;
  if (n == 0) return out;

  struct Offset {
    int dr, dc;
    double weight;
  };
  const Offset neighbours[8] = {{-1, -1, config.diagonal_weight}, {-1, 0, config.direct_weight},
                                {-1, 1, config.diagonal_weight},  {0, -1, config.direct_weight},
                                {0, 1, config.direct_weight},     {1, -1, config.diagonal_weight},
                                {1, 0, config.direct_weight},     {1, 1, config.diagonal_weight}};

  // Each removed pixel p satisfies sum_j w_j (x_p - x_j) = 0 over its in-image
  // neighbours j. Moving known neighbours to the right-hand side leaves a
  // symmetric positive definite system (Dirichlet-bounded graph Laplacian).
  const int channels = image.channels();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(n) * 9);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, channels);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t p = static_cast<std::size_t>(r) * w + c;
      const int row = unknown_index[p];
      if (row < 0) continue;
      double diag = 0.0;
      for (const Offset& o : neighbours) {
        const int rr = r + o.dr;
        const int cc = c + o.dc;
        if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
        diag += o.weight;
        const std::size_t q = static_cast<std::size_t>(rr) * w + cc;
        if (unknown_index[q] >= 0) {
          triplets.emplace_back(row, unknown_index[q], -o.weight);
        } else {
          for (int ch = 0; ch < channels; ++ch) rhs(row, ch) += o.weight * image.plane(ch)[q];
        }
      }
      triplets.emplace_back(row, row, diag);
    }
  }
  Eigen::SparseMatrix<double> system(n, n);
  system.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(system);
  if (solver.info() != Eigen::Success) throw InvalidInput("imputation system is singular");
  const Eigen::MatrixXd solution = solver.solve(rhs);

  Rng rng(noise_stream);
  const bool noisy = config.noise_std > 0.0;
  for (int ch = 0; ch < channels; ++ch) {
    auto plane = out.plane(ch);
    for (std::size_t p = 0; p < n_pixels; ++p) {
      const double noise = noisy ? config.noise_std * rng.normal() : 0.0;
      const int row = unknown_index[p];
      if (row < 0) continue;
      plane[p] = std::clamp(solution(row, ch) + noise, 0.0, 1.0);
    }
  }
  return out;
}

double average_drop_from_confidences(double original, double masked) {
  if (!(original > 0.0)) throw UndefinedMetric("average drop is undefined for zero class confidence");
  return std::max(0.0, original - masked) / original;
}

double average_drop(Classifier& model, const Image& image, const AttributionMap& map, int cls) {
  const Image masked = mask_image(image, map);
  const std::vector<Image> batch{image, masked};
  const auto probs = model.forward(batch);
  return average_drop_from_confidences(probs[0][static_cast<std::size_t>(cls)],
                                       probs[1][static_cast<std::size_t>(cls)]);
}

double complexity(const AttributionMap& map) {
  if (map.size() == 0) return 0.0;
  double s = 0.0;
  for (double v : map.values()) s += std::abs(v);
  return s / static_cast<double>(map.size());
}

CoherencyResult coherency_from_maps(const AttributionMap& original, const AttributionMap& recomputed) {
  if (original.rows() != recomputed.rows() || original.cols() != recomputed.cols())
    throw InvalidInput("coherency: maps differ in shape");
  const auto r = stats::pearson(recomputed.values(), original.values());
  if (!r) return {0.0, true};
  return {(*r + 1.0) / 2.0, false};
}

CoherencyResult coherency(Classifier& model, const Image& image, const AttributionMap& map, int cls,
                          const AttributionFunction& method, int layer) {
  const Image masked = mask_image(image, map);
  const AttributionMap again = method(model, layer, masked, cls);
  return coherency_from_maps(map, again);
}

double adcc(double ad, double cmx, double chn) {
  const double a = std::max(chn, kMetricEpsilon);
  const double b = std::max(1.0 - cmx, kMetricEpsilon);
  const double c = std::max(1.0 - ad, kMetricEpsilon);
  return 3.0 / (1.0 / a + 1.0 / b + 1.0 / c);
}

double arcc(double chn, double cmx, double road_score) {
  const double a = std::max(chn, kMetricEpsilon);
  const double b = std::max(1.0 - cmx, kMetricEpsilon);
  const double c = std::clamp(road_score, kMetricEpsilon, 1.0);
  return 3.0 / (1.0 / a + 1.0 / b + 1.0 / c);
}

RoadResult road_detailed(Classifier& model, const Image& image, const AttributionMap& map, int cls,
                         const RoadConfig& config, std::uint64_t image_key) {
  config.validate();
  if (map.rows() != image.height() || map.cols() != image.width())
    throw InvalidInput("ROAD needs the map at input resolution");
  const PixelRanking morf = rank_pixels(map, RankOrder::MoRF);
  const PixelRanking lerf = rank_pixels(map, RankOrder::LeRF);
  RoadResult result;
  double total = 0.0;
  for (std::size_t k = 0; k < config.fractions.size(); ++k) {
    const std::size_t count = perturbed_count(config.fractions[k], map.size());
    const std::uint64_t stream = derive_seed(config.noise_seed, {image_key, static_cast<std::uint64_t>(k)});
    std::vector<Image> batch;
    batch.push_back(noisy_linear_imputation(image, perturbation_mask(lerf, count), config, stream));
    batch.push_back(noisy_linear_imputation(image, perturbation_mask(morf, count), config, stream));
    const auto probs = model.forward(batch);
    const double l = probs[0][static_cast<std::size_t>(cls)];
    const double m = probs[1][static_cast<std::size_t>(cls)];
    result.lerf.push_back(l);
    result.morf.push_back(m);
    total += l - m;
  }
  result.score = total / static_cast<double>(config.fractions.size());
  return result;
}

double road(Classifier& model, const Image& image, const AttributionMap& map, int cls, const RoadConfig& config,
            std::uint64_t image_key) {
  return road_detailed(model, image, map, cls, config, image_key).score;
}

const std::vector<std::string>& metric_ids() {
  static const std::vector<std::string> ids{"ad", "cmx", "chn", "adcc", "road", "arcc", "cosine"};
  return ids;
}

MetricId parse_metric_id(std::string_view id) {
  if (id == "ad") return MetricId::Ad;
  if (id == "cmx") return MetricId::Cmx;
  if (id == "chn") return MetricId::Chn;
  if (id == "adcc") return MetricId::Adcc;
  if (id == "road") return MetricId::Road;
  if (id == "arcc") return MetricId::Arcc;
  if (id == "cosine") return MetricId::Cosine;
  throw LookupError("unknown metric '" + std::string(id) + "'");
}

std::string_view to_string(MetricId id) { return metric_ids()[static_cast<std::size_t>(id)]; }

std::string MetricRecord::key() const {
  std::string s;
  for (const std::string* part : {&image_id, &model_id, &method_id, &layer_id, &metric_id}) {
    s += *part;
    s += '\x1f';
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
  return buf;
}

}  // namespace camgauge
