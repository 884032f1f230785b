#include "camgauge/refinecam.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "camgauge/error.hpp"

namespace camgauge {

AggregationMode parse_aggregation_mode(std::string_view name) {
  if (name == "multiply") return AggregationMode::Multiply;
  if (name == "geometric" || name == "geometric_mean") return AggregationMode::GeometricMean;
  if (name == "invexp" || name == "inverse_exp_mean") return AggregationMode::InverseExpMean;
  throw LookupError("unknown aggregation mode '" + std::string(name) + "'");
}

std::string_view to_string(AggregationMode mode) {
  switch (mode) {
    case AggregationMode::Multiply:
      return "multiply";
    case AggregationMode::GeometricMean:
      return "geometric";
    case AggregationMode::InverseExpMean:
      return "invexp";
  }
  return "multiply";
}

AttributionMap aggregate(std::span<const AttributionMap> maps, AggregationMode mode) {
  if (maps.empty()) throw InvalidInput("aggregate needs at least one map");
  const int rows = maps.front().rows();
  const int cols = maps.front().cols();
  for (const auto& m : maps)
    if (m.rows() != rows || m.cols() != cols) throw InvalidInput("aggregate: maps differ in shape");

  const std::size_t n = maps.front().size();
  const double count = static_cast<double>(maps.size());
  Grid out(rows, cols);
  bool degenerate = false;

  switch (mode) {
    case AggregationMode::Multiply: {
      std::fill(out.values().begin(), out.values().end(), 1.0);
      for (const auto& m : maps) {
        degenerate = degenerate || m.degenerate();
        for (std::size_t i = 0; i < n; ++i) out[i] *= m[i];
      }
      break;
    }
    case AggregationMode::GeometricMean: {
      for (std::size_t i = 0; i < n; ++i) {
        double log_sum = 0.0;
        for (const auto& m : maps) log_sum += std::log(std::max(m[i], kAggregationEpsilon));
        out[i] = std::exp(log_sum / count);
      }
      break;
    }
    case AggregationMode::InverseExpMean: {
      std::vector<double> inv(maps.size());
      for (std::size_t i = 0; i < n; ++i) {
        double top = 0.0;
        for (std::size_t j = 0; j < maps.size(); ++j) {
          inv[j] = 1.0 / std::max(maps[j][i], kAggregationEpsilon);
          top = std::max(top, inv[j]);
        }
        double s = 0.0;
        for (double u : inv) s += std::exp(u - top);
        out[i] = 1.0 / (top + std::log(s / count));
      }
      break;
    }
  }
  const auto& first = maps.front();
  return AttributionMap(std::move(out), first.source_height(), first.source_width(), degenerate);
}

AttributionMap refine_cam(const AttributionFunction& base, Classifier& model, int layer, int cls,
                          const Image& image, AggregationMode mode) {
  const auto layers = model.layer_list();
  if (layer < 0 || layer >= static_cast<int>(layers.size()))
    throw LookupError("unknown layer index " + std::to_string(layer));
  std::vector<AttributionMap> factors;
  factors.reserve(layers.size() - layer);
  for (int l = layer; l < static_cast<int>(layers.size()); ++l) {
    factors.push_back(to_input_resolution(base(model, l, image, cls), image.height(), image.width()));
  }
  AttributionMap combined = aggregate(factors, mode);
  AttributionMap out = normalize_map(combined);
  const auto& shallow = layers[layer];
  return AttributionMap(out.grid(), shallow.height, shallow.width, out.degenerate());
}

AttributionFunction make_refined(AttributionFunction base, AggregationMode mode) {
  if (!base.layer_dependent()) throw InvalidInput("refinement needs a layer-dependent base method");
  std::string id = base.id() + "+refine";
  if (mode != AggregationMode::Multiply) id += "-" + std::string(to_string(mode));
  return AttributionFunction(
      id,
      [base = std::move(base), mode](Classifier& model, int layer, const Image& image, int cls) {
        return refine_cam(base, model, layer, cls, image, mode);
      },
      true);
}

}  // namespace camgauge
