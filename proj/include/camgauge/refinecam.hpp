#pragma once

#include <span>
#include <string>
#include <string_view>

#include "camgauge/cam.hpp"

namespace camgauge {

enum class AggregationMode { Multiply, GeometricMean, InverseExpMean };

/// Floor applied before 1/L and the n-th root, both singular at zero.
inline constexpr double kAggregationEpsilon = 1e-6;

/// Accepts multiply | geometric | geometric_mean | invexp | inverse_exp_mean.
AggregationMode parse_aggregation_mode(std::string_view name);
/// CLI spelling: multiply, geometric, invexp.
std::string_view to_string(AggregationMode mode);

/// Element-wise combination of equally sized maps, before normalization:
///   multiply          prod_i L_i
///   geometric_mean    (prod_i max(L_i, eps))^(1/n)
///   inverse_exp_mean  1 / ln(mean_i exp(1 / max(L_i, eps)))   (log-sum-exp)
/// Under multiply, a degenerate factor makes the result degenerate.
AttributionMap aggregate(std::span<const AttributionMap> maps, AggregationMode mode);

/// Refines the base method's map at `layer` with the maps of every deeper
/// layer: each factor is computed at input resolution, the factors are
/// aggregated and the result normalized.
AttributionMap refine_cam(const AttributionFunction& base, Classifier& model, int layer, int cls,
                          const Image& image, AggregationMode mode = AggregationMode::Multiply);

/// Wraps a layer-dependent base method; id is "<base>+refine" for multiply and
/// "<base>+refine-<mode>" otherwise.
AttributionFunction make_refined(AttributionFunction base, AggregationMode mode = AggregationMode::Multiply);

}  // namespace camgauge
