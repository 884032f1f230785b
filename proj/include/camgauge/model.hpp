#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "camgauge/core.hpp"

namespace camgauge {

/// Channels x height x width real tensor (layer activations or their gradients).
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int channels, int height, int width, double fill = 0.0);
  Tensor3(int channels, int height, int width, std::vector<double> values);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  double& at(int k, int r, int c) { return values_[k * plane_size() + static_cast<std::size_t>(r) * width_ + c]; }
  double at(int k, int r, int c) const { return values_[k * plane_size() + static_cast<std::size_t>(r) * width_ + c]; }
  std::span<double> plane(int k) { return std::span<double>(values_).subspan(k * plane_size(), plane_size()); }
  std::span<const double> plane(int k) const {
    return std::span<const double>(values_).subspan(k * plane_size(), plane_size());
  }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  Grid channel(int k) const;

  bool same_shape(const Tensor3& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

struct ImageShape {
  int channels;
  int height;
  int width;
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// One entry of a model's ordered layer list (shallow to deep).
struct LayerInfo {
  std::string name;
  int index = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
};

using LayerList = std::vector<LayerInfo>;

struct ClassProbabilities {
  std::vector<double> probs;
  double operator[](std::size_t c) const { return probs[c]; }
  std::size_t size() const { return probs.size(); }
};

struct ActivationsAndGradient {
  Tensor3 activations;
  Tensor3 gradient;  // d(pre-softmax score of the class) / d(activations)
};

/// Numerically stable softmax.
ClassProbabilities softmax(std::span<const double> logits);

/// Uniform contract over classifiers. Instances are not safe for concurrent use.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual int num_classes() const = 0;
  virtual ImageShape input_shape() const = 0;
  virtual LayerList layer_list() const = 0;

  /// Pre-softmax scores, one row per image. Throws InvalidInput on shape mismatch.
  virtual std::vector<std::vector<double>> logits(std::span<const Image> images) = 0;

  /// Activations at the end of `layer` (index into layer_list()). One forward pass.
  virtual Tensor3 activations(const Image& image, int layer) = 0;

  virtual ActivationsAndGradient activations_and_gradients(const Image& image, int layer, int cls) = 0;

  std::vector<ClassProbabilities> forward(std::span<const Image> images);
  double probability(const Image& image, int cls);

 protected:
  void check_input(const Image& image) const;
  void check_layer(int layer) const;
  void check_class(int cls) const;
};

/// Looks a layer up by name; throws LookupError when absent.
const LayerInfo& find_layer(const LayerList& layers, std::string_view name);

struct SmallCnnConfig {
  int num_classes = 6;
  int input_channels = 3;
  int input_size = 224;
  int stem_width = 16;
  std::vector<int> stage_widths{16, 32, 64, 128};
  int convs_per_stage = 2;
  // Fixed input standardization (x - mean) * scale applied before the stem.
  double input_mean = 0.5;
  double input_scale = 4.0;
  // Channels per conv are split into this many groups, each normalized per sample
  // before the learned scale/shift; 0 disables normalization.
  int norm_groups = 4;
  std::uint64_t seed = 0;

  /// Throws InvalidInput describing the first violated constraint.
  void validate() const;
};

/// Convolutional classifier: stride-2 stem, then stages of 3x3 convs (the first
/// of each stage strided), each followed by group normalization and ReLU, then
/// global average pool and a linear head.
/// Stage outputs (post-ReLU) form the layer list. `Scalar` is float for the
/// shipped model; double exists for gradient verification.
template <typename Scalar>
class BasicSmallCnn final : public Classifier {
 public:
  explicit BasicSmallCnn(SmallCnnConfig config);

  int num_classes() const override { return config_.num_classes; }
  ImageShape input_shape() const override {
    return {config_.input_channels, config_.input_size, config_.input_size};
  }
  LayerList layer_list() const override;
  std::vector<std::vector<double>> logits(std::span<const Image> images) override;
  Tensor3 activations(const Image& image, int layer) override;
  ActivationsAndGradient activations_and_gradients(const Image& image, int layer, int cls) override;

  /// Logits of the head when the activations of `layer` are replaced by `acts`.
  std::vector<double> logits_from_layer(const Tensor3& acts, int layer);

  const SmallCnnConfig& config() const { return config_; }
  std::span<Scalar> parameters() { return params_; }
  std::span<const Scalar> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// Accumulates d(mean cross-entropy)/d(params) for one sample (raw [0, 1] pixels) into `grad`
  /// (scaled by `weight`) and returns the sample's loss.
  double accumulate_gradient(std::span<const Scalar> input, int label, double weight, std::span<Scalar> grad);

  struct Conv {
    int in_ch, out_ch, stride, in_size, out_size;
    std::size_t weight_offset, bias_offset, gamma_offset;
  };
  const std::vector<Conv>& convs() const { return convs_; }

 private:
  struct Trace {
    std::vector<std::vector<Scalar>> acts;
    std::vector<std::vector<Scalar>> normed;
    std::vector<std::vector<Scalar>> inv_std;
  };
  static constexpr double kNormEpsilon = 1e-5;

  void forward_from(int first_conv, Trace& trace) const;
  void backward(int from, int to, std::vector<Scalar>& grad, const Trace& trace, std::span<Scalar> param_grad) const;
  std::vector<double> pool(const std::vector<Scalar>& last) const;
  std::vector<Scalar> head_gradient(std::span<const double> dlogits) const;
  void head(const std::vector<Scalar>& last, std::span<double> out) const;
  std::vector<Scalar> to_input(const Image& image) const;

  SmallCnnConfig config_;
  std::vector<Conv> convs_;
  std::vector<int> stage_end_;  // conv index whose output closes each stage
  std::size_t head_weight_offset_ = 0;
  std::size_t head_bias_offset_ = 0;
  std::vector<Scalar> params_;
};

using SmallCnn = BasicSmallCnn<float>;

std::unique_ptr<SmallCnn> build_small_cnn(const SmallCnnConfig& config);

/// Analytic parameter count of the architecture described by `config`.
std::size_t small_cnn_parameter_count(const SmallCnnConfig& config);

struct CheckpointMeta {
  SmallCnnConfig config;
  std::vector<std::string> class_names;
};

/// Writes `path` (float32 blob) and its JSON sidecar (`path` with extension .json).
void save_checkpoint(const SmallCnn& model, const std::vector<std::string>& class_names,
                     const std::filesystem::path& path);
std::unique_ptr<SmallCnn> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

/// Resolves a directory to `<dir>/model.bin`; files are returned unchanged.
std::filesystem::path resolve_checkpoint_path(const std::filesystem::path& path);

}  // namespace camgauge
