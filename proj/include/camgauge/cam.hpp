#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "camgauge/core.hpp"
#include "camgauge/model.hpp"

namespace camgauge {

enum class CamMethod { GradCam, LayerCam, ScoreCam };
enum class TrivialKind { Random, Half, All1s };

/// ReLU(sum_k w_k A_k) at the layer's native resolution.
Grid weighted_activation_sum(const Tensor3& activations, std::span<const double> weights);

/// Spatial mean of each gradient channel.
std::vector<double> gradcam_weights(const Tensor3& gradient);

/// ReLU(sum_k ReLU(grad_k) * A_k), i.e. spatially resolved positive-gradient weights.
Grid layercam_map(const Tensor3& activations, const Tensor3& gradient);

/// Softmax over channels of the class probability of the image masked by
/// each normalized, upsampled activation channel. Issues one forward per channel.
std::vector<double> scorecam_weights(Classifier& model, const Image& image, const Tensor3& activations, int cls);

/// Class attribution at the layer's native resolution, normalized to [0, 1].
/// An all-zero result is flagged degenerate.
AttributionMap compute_cam(CamMethod method, Classifier& model, int layer, const Image& image, int cls);

/// Intentionally uninformative baselines at (height, width).
/// random: i.i.d. U[0,1]; half: 0.5 with (0,0)=0 and (h-1,w-1)=1; all1s: 1 with (0,0)=0.
AttributionMap trivial_cam(TrivialKind kind, int height, int width, std::uint64_t seed);

/// Attribution method bound to a method id. Produces normalized maps at the
/// input image's resolution. Deterministic; stochastic methods use `seed`.
class AttributionFunction {
 public:
  using Fn = std::function<AttributionMap(Classifier&, int layer, const Image&, int cls)>;

  AttributionFunction() = default;
  AttributionFunction(std::string id, Fn fn, bool layer_dependent)
      : id_(std::move(id)), fn_(std::move(fn)), layer_dependent_(layer_dependent) {}

  AttributionMap operator()(Classifier& model, int layer, const Image& image, int cls) const {
    return fn_(model, layer, image, cls);
  }
  const std::string& id() const { return id_; }
  /// False for the trivial baselines, which ignore the layer argument.
  bool layer_dependent() const { return layer_dependent_; }

 private:
  std::string id_;
  Fn fn_;
  bool layer_dependent_ = true;
};

/// Registered method ids: gradcam, layercam, scorecam, random, half, all1s.
const std::vector<std::string>& method_ids();
bool is_cam_method(std::string_view id);
bool is_trivial_method(std::string_view id);

/// Throws LookupError for unknown ids.
AttributionFunction make_attribution(std::string_view method_id, std::uint64_t seed = 0);

CamMethod parse_cam_method(std::string_view id);
TrivialKind parse_trivial_kind(std::string_view id);

}  // namespace camgauge
