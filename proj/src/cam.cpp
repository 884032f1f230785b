#include "camgauge/cam.hpp"

#include <algorithm>
#include <cmath>

#include "camgauge/error.hpp"
#include "camgauge/rng.hpp"

namespace camgauge {

Grid weighted_activation_sum(const Tensor3& acts, std::span<const double> weights) {
  if (static_cast<int>(weights.size()) != acts.channels())
    throw InvalidInput("channel weight count does not match activation channels");
  Grid out(acts.height(), acts.width(), 0.0);
  auto o = out.values();
  for (int k = 0; k < acts.channels(); ++k) {
    const double w = weights[k];
    if (w == 0.0) continue;
    const auto a = acts.plane(k);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += w * a[i];
  }
  for (double& v : o) v = std::max(v, 0.0);
  return out;
}

std::vector<double> gradcam_weights(const Tensor3& gradient) {
  std::vector<double> w(gradient.channels());
  for (int k = 0; k < gradient.channels(); ++k) {
    double s = 0.0;
    for (double g : gradient.plane(k)) s += g;
    w[k] = s / static_cast<double>(gradient.plane_size());
  }
  return w;
}

Grid layercam_map(const Tensor3& acts, const Tensor3& gradient) {
  if (!acts.same_shape(gradient)) throw InvalidInput("activation and gradient shapes differ");
  Grid out(acts.height(), acts.width(), 0.0);
  auto o = out.values();
  for (int k = 0; k < acts.channels(); ++k) {
    const auto a = acts.plane(k);
    const auto g = gradient.plane(k);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += std::max(g[i], 0.0) * a[i];
  }
  for (double& v : o) v = std::max(v, 0.0);
  return out;
}

std::vector<double> scorecam_weights(Classifier& model, const Image& image, const Tensor3& acts, int cls) {
  std::vector<Image> masked;
  masked.reserve(acts.channels());
  for (int k = 0; k < acts.channels(); ++k) {
    const Grid up = resize_bilinear(acts.channel(k), image.height(), image.width());
    masked.push_back(mask_image(image, normalize_map(up)));
  }
  const auto probs = model.forward(masked);
  std::vector<double> scores(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) scores[k] = probs[k][static_cast<std::size_t>(cls)];
  return softmax(scores).probs;
}

AttributionMap compute_cam(CamMethod method, Classifier& model, int layer, const Image& image, int cls) {
  switch (method) {
    case CamMethod::GradCam: {
      const auto ag = model.activations_and_gradients(image, layer, cls);
      return normalize_map(weighted_activation_sum(ag.activations, gradcam_weights(ag.gradient)));
    }
    case CamMethod::LayerCam: {
      const auto ag = model.activations_and_gradients(image, layer, cls);
      return normalize_map(layercam_map(ag.activations, ag.gradient));
    }
    case CamMethod::ScoreCam: {
      const Tensor3 acts = model.activations(image, layer);
      return normalize_map(weighted_activation_sum(acts, scorecam_weights(model, image, acts, cls)));
    }
  }
  throw InvalidInput("unhandled CAM method");
}

AttributionMap trivial_cam(TrivialKind kind, int height, int width, std::uint64_t seed) {
  if (height < 2 || width < 2) throw InvalidInput("trivial maps need at least 2x2 pixels");
  Grid g(height, width, 0.0);
  switch (kind) {
    case TrivialKind::Random: {
      Rng rng(derive_seed(seed, {fnv1a64("random-cam")}));
      for (double& v : g.values()) v = rng.uniform();
      break;
    }
    case TrivialKind::Half:
      std::fill(g.values().begin(), g.values().end(), 0.5);
      g(0, 0) = 0.0;
      g(height - 1, width - 1) = 1.0;
      break;
    case TrivialKind::All1s:
      std::fill(g.values().begin(), g.values().end(), 1.0);
      g(0, 0) = 0.0;
      break;
  }
  return AttributionMap(std::move(g), height, width);
}

const std::vector<std::string>& method_ids() {
  static const std::vector<std::string> ids{"gradcam", "layercam", "scorecam", "random", "half", "all1s"};
  return ids;
}

bool is_cam_method(std::string_view id) { return id == "gradcam" || id == "layercam" || id == "scorecam"; }
bool is_trivial_method(std::string_view id) { return id == "random" || id == "half" || id == "all1s"; }

CamMethod parse_cam_method(std::string_view id) {
  if (id == "gradcam") return CamMethod::GradCam;
  if (id == "layercam") return CamMethod::LayerCam;
  if (id == "scorecam") return CamMethod::ScoreCam;
  throw LookupError("unknown CAM method '" + std::string(id) + "'");
}

TrivialKind parse_trivial_kind(std::string_view id) {
  if (id == "random") return TrivialKind::Random;
  if (id == "half") return TrivialKind::Half;
  if (id == "all1s") return TrivialKind::All1s;
  throw LookupError("unknown trivial baseline '" + std::string(id) + "'");
}

AttributionFunction make_attribution(std::string_view method_id, std::uint64_t seed) {
  if (is_cam_method(method_id)) {
    const CamMethod m = parse_cam_method(method_id);
    return AttributionFunction(
        std::string(method_id),
        [m](Classifier& model, int layer, const Image& image, int cls) {
          return to_input_resolution(compute_cam(m, model, layer, image, cls), image.height(), image.width());
        },
        true);
  }
  const TrivialKind k = parse_trivial_kind(method_id);
  return AttributionFunction(
      std::string(method_id),
      [k, seed](Classifier&, int, const Image& image, int) {
        return trivial_cam(k, image.height(), image.width(), seed);
      },
      false);
}

}  // namespace camgauge
