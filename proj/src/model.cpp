#include "camgauge/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <json.hpp>

#include "camgauge/error.hpp"
#include "camgauge/rng.hpp"

namespace camgauge {

Tensor3::Tensor3(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width),
      values_(static_cast<std::size_t>(channels) * height * width, fill) {}

Tensor3::Tensor3(int channels, int height, int width, std::vector<double> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(channels) * height * width)
    throw InvalidInput("tensor value count does not match its shape");
}

Grid Tensor3::channel(int k) const {
  auto p = plane(k);
  return Grid(height_, width_, std::vector<double>(p.begin(), p.end()));
}

ClassProbabilities softmax(std::span<const double> logits) {
  ClassProbabilities out;
  out.probs.resize(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] = std::exp(logits[i] - m);
    sum += out.probs[i];
  }
  for (double& p : out.probs) p /= sum;
  return out;
}

std::vector<ClassProbabilities> Classifier::forward(std::span<const Image> images) {
  auto rows = logits(images);
  std::vector<ClassProbabilities> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(softmax(r));
  return out;
}

double Classifier::probability(const Image& image, int cls) {
  check_class(cls);
  return forward(std::span<const Image>(&image, 1)).front()[static_cast<std::size_t>(cls)];
}

void Classifier::check_input(const Image& image) const {
  const ImageShape s = input_shape();
  if (image.channels() != s.channels || image.height() != s.height || image.width() != s.width)
    throw InvalidInput("model expects " + std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
                       std::to_string(s.width) + " input, got " + std::to_string(image.channels()) + "x" +
                       std::to_string(image.height()) + "x" + std::to_string(image.width()));
}

void Classifier::check_layer(int layer) const {
  const auto n = static_cast<int>(layer_list().size());
  if (layer < 0 || layer >= n) throw LookupError("unknown layer index " + std::to_string(layer));
}

void Classifier::check_class(int cls) const {
  if (cls < 0 || cls >= num_classes()) throw InvalidInput("class index " + std::to_string(cls) + " out of range");
}

const LayerInfo& find_layer(const LayerList& layers, std::string_view name) {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw LookupError("unknown layer '" + std::string(name) + "'");
}

void SmallCnnConfig::validate() const {
  if (num_classes < 2) throw InvalidInput("num_classes must be >= 2");
  if (input_channels < 1) throw InvalidInput("input_channels must be >= 1");
  if (stem_width < 1) throw InvalidInput("stem_width must be >= 1");
  if (stage_widths.empty()) throw InvalidInput("at least one stage is required");
  if (convs_per_stage < 1) throw InvalidInput("convs_per_stage must be >= 1");
  for (int w : stage_widths)
    if (w < 1) throw InvalidInput("stage widths must be >= 1");
  const int factor = 1 << (stage_widths.size() + 1);
  if (input_size < factor || input_size % factor != 0)
    throw InvalidInput("input_size must be a positive multiple of " + std::to_string(factor));
  if (norm_groups < 0) throw InvalidInput("norm_groups must be >= 0");
  if (norm_groups > 0) {
    if (stem_width % norm_groups != 0) throw InvalidInput("stem_width must be divisible by norm_groups");
    for (int w : stage_widths)
      if (w % norm_groups != 0) throw InvalidInput("stage widths must be divisible by norm_groups");
  }
  if (!std::isfinite(input_mean) || !(input_scale > 0.0)) throw InvalidInput("input standardization must be finite with scale > 0");
}

std::size_t small_cnn_parameter_count(const SmallCnnConfig& c) {
  const std::size_t per_channel = c.norm_groups > 0 ? 2 : 1;
  auto conv = [&](std::size_t in, std::size_t out) { return out * in * 9 + per_channel * out; };
  std::size_t n = conv(c.input_channels, c.stem_width);
  std::size_t prev = c.stem_width;
  for (int w : c.stage_widths) {
    n += conv(prev, w) + (c.convs_per_stage - 1) * conv(w, w);
    prev = w;
  }
  return n + prev * c.num_classes + c.num_classes;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unrolls 3x3 / pad-1 patches: rows (ci, ky, kx), columns output pixels.
// Sum of a[k] (or a[k] * b[k]) in index order. Eigen's vectorised reductions
// peel according to pointer alignment, which makes results vary between runs.
template <typename T>
double row_sum(const T* a, const T* b, Eigen::Index n) {
  double s = 0.0;
  if (b)
    for (Eigen::Index k = 0; k < n; ++k) s += static_cast<double>(a[k]) * b[k];
  else
    for (Eigen::Index k = 0; k < n; ++k) s += a[k];
  return s;
}

template <typename T>
void im2col(const T* in, int in_ch, int in_size, int stride, int out_size, T* cols) {
  const std::size_t plane = static_cast<std::size_t>(out_size) * out_size;
  for (int ci = 0; ci < in_ch; ++ci) {
    const T* src = in + static_cast<std::size_t>(ci) * in_size * in_size;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * plane;
        for (int oy = 0; oy < out_size; ++oy) {
          const int iy = oy * stride + ky - 1;
          T* row = dst + static_cast<std::size_t>(oy) * out_size;
          if (iy < 0 || iy >= in_size) {
            std::fill(row, row + out_size, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * in_size;
          for (int ox = 0; ox < out_size; ++ox) {
            const int ix = ox * stride + kx - 1;
            row[ox] = (ix < 0 || ix >= in_size) ? T(0) : srow[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int in_ch, int in_size, int stride, int out_size, T* out) {
  const std::size_t plane = static_cast<std::size_t>(out_size) * out_size;
  std::fill(out, out + static_cast<std::size_t>(in_ch) * in_size * in_size, T(0));
  for (int ci = 0; ci < in_ch; ++ci) {
    T* dst = out + static_cast<std::size_t>(ci) * in_size * in_size;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * plane;
        for (int oy = 0; oy < out_size; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in_size) continue;
          const T* row = src + static_cast<std::size_t>(oy) * out_size;
          T* drow = dst + static_cast<std::size_t>(iy) * in_size;
          for (int ox = 0; ox < out_size; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < in_size) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
BasicSmallCnn<Scalar>::BasicSmallCnn(SmallCnnConfig config) : config_(std::move(config)) {
  config_.validate();
  const bool norm = config_.norm_groups > 0;
  std::size_t offset = 0;
  auto add_conv = [&](int in, int out, int stride, int in_size) {
    Conv c{in, out, stride, in_size, in_size / stride, offset, 0, 0};
    offset += static_cast<std::size_t>(out) * in * 9;
    c.bias_offset = offset;
    offset += out;
    if (norm) {
      c.gamma_offset = offset;
      offset += out;
    }
    convs_.push_back(c);
    return c.out_size;
  };
  int size = add_conv(config_.input_channels, config_.stem_width, 2, config_.input_size);
  int prev = config_.stem_width;
  for (int w : config_.stage_widths) {
    size = add_conv(prev, w, 2, size);
    for (int i = 1; i < config_.convs_per_stage; ++i) size = add_conv(w, w, 1, size);
    stage_end_.push_back(static_cast<int>(convs_.size()) - 1);
    prev = w;
  }
  head_weight_offset_ = offset;
  offset += static_cast<std::size_t>(prev) * config_.num_classes;
  head_bias_offset_ = offset;
  offset += config_.num_classes;
  params_.assign(offset, Scalar(0));

  Rng rng(derive_seed(config_.seed, {fnv1a64("small-cnn-init")}));
  for (const Conv& c : convs_) {
    const double std_dev = std::sqrt(2.0 / (c.in_ch * 9));
    for (std::size_t i = 0; i < static_cast<std::size_t>(c.out_ch) * c.in_ch * 9; ++i)
      params_[c.weight_offset + i] = static_cast<Scalar>(rng.normal() * std_dev);
    if (norm) std::fill_n(params_.begin() + c.gamma_offset, c.out_ch, Scalar(1));
  }
  const double head_std = std::sqrt(1.0 / prev);
  for (std::size_t i = 0; i < static_cast<std::size_t>(prev) * config_.num_classes; ++i)
    params_[head_weight_offset_ + i] = static_cast<Scalar>(rng.normal() * head_std);
}

template <typename Scalar>
LayerList BasicSmallCnn<Scalar>::layer_list() const {
  LayerList out;
  for (std::size_t s = 0; s < stage_end_.size(); ++s) {
    const Conv& c = convs_[stage_end_[s]];
    out.push_back({"stage" + std::to_string(s + 1), static_cast<int>(s), c.out_ch, c.out_size, c.out_size});
  }
  return out;
}

template <typename Scalar>
std::vector<Scalar> BasicSmallCnn<Scalar>::to_input(const Image& image) const {
  check_input(image);
  const auto px = image.pixels();
  std::vector<Scalar> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    out[i] = static_cast<Scalar>((px[i] - config_.input_mean) * config_.input_scale);
  return out;
}

// trace.acts[i] holds the input of conv i; trace.acts[first_conv] must be populated.
// With normalization, trace.normed[i] keeps the normalized pre-activation of conv i
// and trace.inv_std[i] the per-group 1/sigma, both needed by backward().
template <typename Scalar>
void BasicSmallCnn<Scalar>::forward_from(int first_conv, Trace& trace) const {
  const std::size_t n = convs_.size();
  trace.acts.resize(n + 1);
  trace.normed.resize(n);
  trace.inv_std.resize(n);
  const int groups = config_.norm_groups;
  std::vector<Scalar> cols;
  for (std::size_t i = first_conv; i < n; ++i) {
    const Conv& c = convs_[i];
    const Eigen::Index hw = static_cast<Eigen::Index>(c.out_size) * c.out_size;
    cols.resize(static_cast<std::size_t>(c.in_ch) * 9 * hw);
    im2col(trace.acts[i].data(), c.in_ch, c.in_size, c.stride, c.out_size, cols.data());
    trace.acts[i + 1].resize(static_cast<std::size_t>(c.out_ch) * hw);
    Eigen::Map<const RowMat<Scalar>> w(params_.data() + c.weight_offset, c.out_ch, c.in_ch * 9);
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> b(params_.data() + c.bias_offset, c.out_ch);
    Eigen::Map<const RowMat<Scalar>> x(cols.data(), c.in_ch * 9, hw);
    Eigen::Map<RowMat<Scalar>> y(trace.acts[i + 1].data(), c.out_ch, hw);
    y.noalias() = w * x;
    if (groups > 0) {
      const int per_group = c.out_ch / groups;
      const Eigen::Index count = per_group * hw;
      trace.inv_std[i].resize(groups);
      for (int g = 0; g < groups; ++g) {
        auto block = y.middleRows(g * per_group, per_group);
        double sum = 0.0, sq = 0.0;
        for (Eigen::Index r = 0; r < block.rows(); ++r)
          for (Eigen::Index k = 0; k < hw; ++k) {
            const double v = block(r, k);
            sum += v;
            sq += v * v;
          }
        const double mean = sum / static_cast<double>(count);
        const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
        const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
        trace.inv_std[i][g] = static_cast<Scalar>(inv);
        block = ((block.array() - static_cast<Scalar>(mean)) * static_cast<Scalar>(inv)).matrix();
      }
      trace.normed[i].assign(trace.acts[i + 1].begin(), trace.acts[i + 1].end());
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gamma(params_.data() + c.gamma_offset, c.out_ch);
      y = y.array().colwise() * gamma.array();
    }
    y.colwise() += b;
    y = y.cwiseMax(Scalar(0));
  }
}

// Propagates `grad` (d/d output of conv `from`) down to the input of conv `to`.
// Parameter gradients are accumulated into `param_grad` when it is non-empty.
template <typename Scalar>
void BasicSmallCnn<Scalar>::backward(int from, int to, std::vector<Scalar>& grad, const Trace& trace,
                                     std::span<Scalar> param_grad) const {
  const int groups = config_.norm_groups;
  const bool want_params = !param_grad.empty();
  std::vector<Scalar> cols, dcols;
  for (int i = from; i >= to; --i) {
    const Conv& c = convs_[i];
    const Eigen::Index hw = static_cast<Eigen::Index>(c.out_size) * c.out_size;
    Eigen::Map<RowMat<Scalar>> dy(grad.data(), c.out_ch, hw);
    Eigen::Map<const RowMat<Scalar>> y(trace.acts[i + 1].data(), c.out_ch, hw);
    dy = (y.array() > Scalar(0)).select(dy, Scalar(0));
    if (want_params) {
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gb(param_grad.data() + c.bias_offset, c.out_ch);
      for (Eigen::Index r = 0; r < dy.rows(); ++r) gb(r) += row_sum<Scalar>(dy.data() + r * hw, nullptr, hw);
    }
    if (groups > 0) {
      Eigen::Map<const RowMat<Scalar>> zn(trace.normed[i].data(), c.out_ch, hw);
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gamma(params_.data() + c.gamma_offset, c.out_ch);
      if (want_params) {
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gg(param_grad.data() + c.gamma_offset, c.out_ch);
        for (Eigen::Index r = 0; r < dy.rows(); ++r) gg(r) += row_sum<Scalar>(dy.data() + r * hw, zn.data() + r * hw, hw);
      }
      dy = dy.array().colwise() * gamma.array();
      const int per_group = c.out_ch / groups;
      const double count = static_cast<double>(per_group * hw);
      for (int g = 0; g < groups; ++g) {
        auto d = dy.middleRows(g * per_group, per_group);
        const auto z = zn.middleRows(g * per_group, per_group);
        double sum_d = 0.0, sum_dz = 0.0;
        const Eigen::Index first = static_cast<Eigen::Index>(g) * per_group * hw;
        for (Eigen::Index r = 0; r < per_group; ++r) {
          sum_d += row_sum<Scalar>(dy.data() + first + r * hw, nullptr, hw);
          sum_dz += row_sum<Scalar>(dy.data() + first + r * hw, zn.data() + first + r * hw, hw);
        }
        const double inv = trace.inv_std[i][g];
        d = ((d.array() - static_cast<Scalar>(sum_d / count) - z.array() * static_cast<Scalar>(sum_dz / count)) *
             static_cast<Scalar>(inv))
                .matrix();
      }
    }
    if (want_params) {
      cols.resize(static_cast<std::size_t>(c.in_ch) * 9 * hw);
      im2col(trace.acts[i].data(), c.in_ch, c.in_size, c.stride, c.out_size, cols.data());
      Eigen::Map<const RowMat<Scalar>> x(cols.data(), c.in_ch * 9, hw);
      Eigen::Map<RowMat<Scalar>> gw(param_grad.data() + c.weight_offset, c.out_ch, c.in_ch * 9);
      gw.noalias() += dy * x.transpose();
    }
    if (i == 0 && to == 0) break;  // the input gradient is never needed
    Eigen::Map<const RowMat<Scalar>> w(params_.data() + c.weight_offset, c.out_ch, c.in_ch * 9);
    dcols.resize(static_cast<std::size_t>(c.in_ch) * 9 * hw);
    Eigen::Map<RowMat<Scalar>> dx(dcols.data(), c.in_ch * 9, hw);
    dx.noalias() = w.transpose() * dy;
    std::vector<Scalar> din(static_cast<std::size_t>(c.in_ch) * c.in_size * c.in_size);
    col2im(dcols.data(), c.in_ch, c.in_size, c.stride, c.out_size, din.data());
    grad = std::move(din);
  }
}

template <typename Scalar>
std::vector<double> BasicSmallCnn<Scalar>::pool(const std::vector<Scalar>& last) const {
  const Conv& c = convs_.back();
  const std::size_t hw = static_cast<std::size_t>(c.out_size) * c.out_size;
  std::vector<double> pooled(c.out_ch);
  for (int k = 0; k < c.out_ch; ++k) {
    const Scalar* a = last.data() + k * hw;
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += a[i];
    pooled[k] = s / static_cast<double>(hw);
  }
  return pooled;
}

template <typename Scalar>
void BasicSmallCnn<Scalar>::head(const std::vector<Scalar>& last, std::span<double> out) const {
  const int channels = convs_.back().out_ch;
  const std::vector<double> pooled = pool(last);
  for (int j = 0; j < config_.num_classes; ++j) {
    double s = params_[head_bias_offset_ + j];
    const Scalar* w = params_.data() + head_weight_offset_ + static_cast<std::size_t>(j) * channels;
    for (int k = 0; k < channels; ++k) s += w[k] * pooled[k];
    out[j] = s;
  }
}

template <typename Scalar>
std::vector<std::vector<double>> BasicSmallCnn<Scalar>::logits(std::span<const Image> images) {
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  Trace trace;
  for (const Image& img : images) {
    trace.acts.assign(1, to_input(img));
    forward_from(0, trace);
    std::vector<double> row(config_.num_classes);
    head(trace.acts.back(), row);
    out.push_back(std::move(row));
  }
  return out;
}

template <typename Scalar>
Tensor3 BasicSmallCnn<Scalar>::activations(const Image& image, int layer) {
  check_layer(layer);
  Trace trace;
  trace.acts.assign(1, to_input(image));
  forward_from(0, trace);
  const Conv& c = convs_[stage_end_[layer]];
  const auto& a = trace.acts[stage_end_[layer] + 1];
  return Tensor3(c.out_ch, c.out_size, c.out_size, std::vector<double>(a.begin(), a.end()));
}

template <typename Scalar>
std::vector<double> BasicSmallCnn<Scalar>::logits_from_layer(const Tensor3& acts_in, int layer) {
  check_layer(layer);
  const int start = stage_end_[layer] + 1;
  const Conv& c = convs_[stage_end_[layer]];
  if (acts_in.channels() != c.out_ch || acts_in.height() != c.out_size || acts_in.width() != c.out_size)
    throw InvalidInput("activation tensor does not match layer shape");
  Trace trace;
  trace.acts.resize(convs_.size() + 1);
  trace.acts[start].assign(acts_in.values().begin(), acts_in.values().end());
  forward_from(start, trace);
  std::vector<double> row(config_.num_classes);
  head(trace.acts.back(), row);
  return row;
}

// Gradient of the pooled-linear head w.r.t. the last feature map, scaled per class.
template <typename Scalar>
std::vector<Scalar> BasicSmallCnn<Scalar>::head_gradient(std::span<const double> dlogits) const {
  const Conv& c = convs_.back();
  const std::size_t hw = static_cast<std::size_t>(c.out_size) * c.out_size;
  std::vector<Scalar> grad(static_cast<std::size_t>(c.out_ch) * hw, Scalar(0));
  for (int k = 0; k < c.out_ch; ++k) {
    double g = 0.0;
    for (int j = 0; j < config_.num_classes; ++j)
      g += dlogits[j] * params_[head_weight_offset_ + static_cast<std::size_t>(j) * c.out_ch + k];
    std::fill(grad.begin() + k * hw, grad.begin() + (k + 1) * hw, static_cast<Scalar>(g / static_cast<double>(hw)));
  }
  return grad;
}

template <typename Scalar>
ActivationsAndGradient BasicSmallCnn<Scalar>::activations_and_gradients(const Image& image, int layer, int cls) {
  check_layer(layer);
  check_class(cls);
  Trace trace;
  trace.acts.assign(1, to_input(image));
  forward_from(0, trace);

  std::vector<double> onehot(config_.num_classes, 0.0);
  onehot[cls] = 1.0;
  std::vector<Scalar> grad = head_gradient(onehot);
  const int target = stage_end_[layer] + 1;  // trace.acts index of the requested activations
  backward(static_cast<int>(convs_.size()) - 1, target, grad, trace, {});

  const Conv& c = convs_[stage_end_[layer]];
  const auto& a = trace.acts[target];
  return {Tensor3(c.out_ch, c.out_size, c.out_size, std::vector<double>(a.begin(), a.end())),
          Tensor3(c.out_ch, c.out_size, c.out_size, std::vector<double>(grad.begin(), grad.end()))};
}

template <typename Scalar>
double BasicSmallCnn<Scalar>::accumulate_gradient(std::span<const Scalar> input, int label, double weight,
                                                  std::span<Scalar> grad_out) {
  check_class(label);
  if (grad_out.size() != params_.size()) throw InvalidInput("gradient buffer size mismatch");
  if (input.size() != static_cast<std::size_t>(config_.input_channels) * config_.input_size * config_.input_size)
    throw InvalidInput("input size mismatch");
  Trace trace;
  trace.acts.resize(1);
  trace.acts[0].resize(input.size());
  for (std::size_t i = 0; i < input.size(); ++i)
    trace.acts[0][i] = static_cast<Scalar>((input[i] - config_.input_mean) * config_.input_scale);
  forward_from(0, trace);

  std::vector<double> logit(config_.num_classes);
  head(trace.acts.back(), logit);
  const ClassProbabilities p = softmax(logit);
  const double loss = -std::log(std::max(p[label], std::numeric_limits<double>::min()));

  const int channels = convs_.back().out_ch;
  const std::vector<double> pooled = pool(trace.acts.back());
  std::vector<double> dlogits(config_.num_classes);
  for (int j = 0; j < config_.num_classes; ++j) {
    dlogits[j] = weight * (p[j] - (j == label ? 1.0 : 0.0));
    grad_out[head_bias_offset_ + j] += static_cast<Scalar>(dlogits[j]);
    Scalar* gw = grad_out.data() + head_weight_offset_ + static_cast<std::size_t>(j) * channels;
    for (int k = 0; k < channels; ++k) gw[k] += static_cast<Scalar>(dlogits[j] * pooled[k]);
  }
  std::vector<Scalar> grad = head_gradient(dlogits);
  backward(static_cast<int>(convs_.size()) - 1, 0, grad, trace, grad_out);
  return loss;
}

template class BasicSmallCnn<float>;
template class BasicSmallCnn<double>;

std::unique_ptr<SmallCnn> build_small_cnn(const SmallCnnConfig& config) { return std::make_unique<SmallCnn>(config); }

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'A', 'M', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json config_to_json(const SmallCnnConfig& c) {
  return {{"num_classes", c.num_classes},     {"input_channels", c.input_channels},
          {"input_size", c.input_size},       {"stem_width", c.stem_width},
          {"stage_widths", c.stage_widths},   {"convs_per_stage", c.convs_per_stage},
          {"input_mean", c.input_mean},       {"input_scale", c.input_scale},
          {"norm_groups", c.norm_groups},
          {"seed", c.seed}};
}

SmallCnnConfig config_from_json(const nlohmann::json& j) {
  SmallCnnConfig c;
  c.num_classes = j.at("num_classes").get<int>();
  c.input_channels = j.at("input_channels").get<int>();
  c.input_size = j.at("input_size").get<int>();
  c.stem_width = j.at("stem_width").get<int>();
  c.stage_widths = j.at("stage_widths").get<std::vector<int>>();
  c.convs_per_stage = j.at("convs_per_stage").get<int>();
  c.input_mean = j.at("input_mean").get<double>();
  c.input_scale = j.at("input_scale").get<double>();
  c.norm_groups = j.at("norm_groups").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::filesystem::path sidecar_path(const std::filesystem::path& blob) {
  auto p = blob;
  p.replace_extension(".json");
  return p;
}

}  // namespace

std::filesystem::path resolve_checkpoint_path(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return path / "model.bin";
  return path;
}

void save_checkpoint(const SmallCnn& model, const std::vector<std::string>& class_names,
                     const std::filesystem::path& path_in) {
  const auto path = resolve_checkpoint_path(path_in);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const auto params = model.parameters();
  const std::uint64_t count = params.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());

  const SmallCnnConfig& c = model.config();
  nlohmann::json side = {{"format", "camgauge-small-cnn"},
                         {"dtype", "float32-le"},
                         {"architecture", config_to_json(c)},
                         {"class_names", class_names},
                         {"input_size", c.input_size},
                         {"seed", c.seed},
                         {"parameter_count", count}};
  std::ofstream js(sidecar_path(path), std::ios::trunc);
  if (!js) throw IoError("cannot write checkpoint sidecar for " + path.string());
  js << side.dump(2) << '\n';
}

std::unique_ptr<SmallCnn> load_checkpoint(const std::filesystem::path& path_in, CheckpointMeta* meta) {
  const auto path = resolve_checkpoint_path(path_in);
  std::ifstream js(sidecar_path(path));
  if (!js) throw IoError("missing checkpoint sidecar " + sidecar_path(path).string());
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint sidecar: " + std::string(e.what()));
  }
  SmallCnnConfig config = config_from_json(side.at("architecture"));
  auto model = build_small_cnn(config);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0 || version != kVersion)
    throw IoError("not a camgauge checkpoint: " + path.string());
  if (count != model->parameter_count())
    throw IoError("checkpoint parameter count does not match its architecture");
  auto params = model->parameters();
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw IoError("truncated checkpoint " + path.string());

  if (meta) {
    meta->config = config;
    meta->class_names = side.value("class_names", std::vector<std::string>{});
  }
  return model;
}

}  // namespace camgauge
