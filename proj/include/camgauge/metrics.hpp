#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "camgauge/cam.hpp"
#include "camgauge/core.hpp"
#include "camgauge/model.hpp"

namespace camgauge {

/// Floor for harmonic-mean terms in ADCC / ARCC.
inline constexpr double kMetricEpsilon = 1e-6;

struct RoadConfig {
  std::vector<double> fractions{0.2, 0.4, 0.6, 0.8};
  double direct_weight = 1.0 / 6.0;
  double diagonal_weight = 1.0 / 12.0;
  double noise_std = 0.01;
  std::uint64_t noise_seed = 0;

  /// Fractions must lie in (0, 1) and be sorted ascending; weights positive; noise_std >= 0.
  void validate() const;
};

/// Boolean grid; true marks a pixel to be removed and imputed.
struct PixelMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> removed;

  PixelMask() = default;
  PixelMask(int r, int c) : rows(r), cols(c), removed(static_cast<std::size_t>(r) * c, 0) {}
  bool operator()(int r, int c) const { return removed[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v = true) { removed[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }
  std::size_t count() const;
};

/// First `count` pixels of a ranking.
PixelMask perturbation_mask(const PixelRanking& ranking, std::size_t count);

/// Number of pixels perturbed for fraction k of n pixels (round half away from zero).
std::size_t perturbed_count(double fraction, std::size_t pixels);

/// Replaces every removed pixel by the weighted mean of its in-image
/// 8-neighbourhood (direct/diagonal weights, renormalized at borders), solved
/// jointly per channel as a sparse linear system, then adds seeded Gaussian
/// noise to the imputed pixels and clamps to [0, 1].
/// Throws InvalidInput when every pixel is removed or shapes differ.
Image noisy_linear_imputation(const Image& image, const PixelMask& mask, const RoadConfig& config,
                              std::uint64_t noise_stream = 0);

/// max(0, p - q) / p for original confidence p and masked confidence q.
double average_drop_from_confidences(double original, double masked);
/// Throws UndefinedMetric when f(X)^c == 0.
double average_drop(Classifier& model, const Image& image, const AttributionMap& map, int cls);

/// Mean absolute attribution.
double complexity(const AttributionMap& map);

struct CoherencyResult {
  double value = 0.0;  // (r + 1) / 2
  bool degenerate = false;
};

/// Pearson r between `original` and `recomputed` mapped to [0, 1]; a constant side gives 0, degenerate.
CoherencyResult coherency_from_maps(const AttributionMap& original, const AttributionMap& recomputed);
CoherencyResult coherency(Classifier& model, const Image& image, const AttributionMap& map, int cls,
                          const AttributionFunction& method, int layer);

double adcc(double ad, double cmx, double chn);
double arcc(double chn, double cmx, double road_score);

struct RoadResult {
  double score = 0.0;
  std::vector<double> lerf;  // f(X'_LeRF,k)^c per fraction
  std::vector<double> morf;  // f(X'_MoRF,k)^c per fraction
};

/// Mean over fractions of f(impute(LeRF_k))^c - f(impute(MoRF_k))^c. The
/// noise stream for fraction k is keyed by (noise_seed, image_key, k) and
/// shared by both orders.
RoadResult road_detailed(Classifier& model, const Image& image, const AttributionMap& map, int cls,
                         const RoadConfig& config, std::uint64_t image_key = 0);
double road(Classifier& model, const Image& image, const AttributionMap& map, int cls, const RoadConfig& config,
            std::uint64_t image_key = 0);

enum class MetricId { Ad, Cmx, Chn, Adcc, Road, Arcc, Cosine };

/// ad, cmx, chn, adcc, road, arcc, cosine (in that order).
const std::vector<std::string>& metric_ids();
MetricId parse_metric_id(std::string_view id);
std::string_view to_string(MetricId id);

/// One evaluated value for (image, model, method, layer, metric).
struct MetricRecord {
  std::string image_id;
  std::string model_id;
  std::string method_id;
  std::string layer_id;
  std::string metric_id;
  double value = 0.0;
  bool degenerate = false;

  /// Content hash of the identifying fields (hex), used for resumable logs.
  std::string key() const;
};

}  // namespace camgauge
