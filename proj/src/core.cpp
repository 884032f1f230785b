#include "camgauge/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "camgauge/error.hpp"

namespace camgauge {

Grid::Grid(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), values_(static_cast<std::size_t>(rows) * cols, fill) {
  if (rows < 0 || cols < 0) throw InvalidInput("grid dimensions must be non-negative");
}

Grid::Grid(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows < 0 || cols < 0 || values_.size() != static_cast<std::size_t>(rows) * cols)
    throw InvalidInput("grid value count does not match " + std::to_string(rows) + "x" + std::to_string(cols));
}

Grid::Grid(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = static_cast<int>(rows.size());
  cols_ = rows_ == 0 ? 0 : static_cast<int>(rows.begin()->size());
  values_.reserve(static_cast<std::size_t>(rows_) * cols_);
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != cols_) throw InvalidInput("ragged grid literal");
    values_.insert(values_.end(), row.begin(), row.end());
  }
}

Image::Image(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width),
      pixels_(static_cast<std::size_t>(channels) * height * width, fill) {
  if (channels <= 0 || height <= 0 || width <= 0) throw InvalidInput("image dimensions must be positive");
}

Image::Image(int channels, int height, int width, std::vector<double> pixels)
    : channels_(channels), height_(height), width_(width), pixels_(std::move(pixels)) {
  if (channels <= 0 || height <= 0 || width <= 0) throw InvalidInput("image dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(channels) * height * width)
    throw InvalidInput("image pixel count does not match its shape");
}

Grid Image::channel(int c) const {
  auto p = plane(c);
  return Grid(height_, width_, std::vector<double>(p.begin(), p.end()));
}

bool Image::all_finite() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](double v) { return std::isfinite(v); });
}

AttributionMap normalize_map(const Grid& raw) {
  if (raw.empty()) throw InvalidInput("cannot normalize an empty map");
  auto v = raw.values();
  for (double x : v)
    if (!std::isfinite(x)) throw InvalidInput("attribution map contains non-finite values");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return AttributionMap(Grid(raw.rows(), raw.cols(), 0.0), raw.rows(), raw.cols(), true);
  Grid out(raw.rows(), raw.cols());
  const double span = hi - lo;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / span;
  return AttributionMap(std::move(out), raw.rows(), raw.cols());
}

AttributionMap normalize_map(const AttributionMap& map) {
  AttributionMap out = normalize_map(map.grid());
  return AttributionMap(out.grid(), map.source_height(), map.source_width(),
                        out.degenerate() || map.degenerate());
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

Grid resize_bilinear(const Grid& src, int target_rows, int target_cols) {
  if (target_rows < 1 || target_cols < 1) throw InvalidInput("resize target dimensions must be >= 1");
  if (src.empty()) throw InvalidInput("cannot resize an empty grid");
  if (src.rows() == target_rows && src.cols() == target_cols) return src;
  const auto ty = bilinear_taps(src.rows(), target_rows);
  const auto tx = bilinear_taps(src.cols(), target_cols);
  Grid out(target_rows, target_cols);
  for (int r = 0; r < target_rows; ++r) {
    const Tap& y = ty[r];
    for (int c = 0; c < target_cols; ++c) {
      const Tap& x = tx[c];
      const double top = src(y.lo, x.lo) + (src(y.lo, x.hi) - src(y.lo, x.lo)) * x.frac;
      const double bottom = src(y.hi, x.lo) + (src(y.hi, x.hi) - src(y.hi, x.lo)) * x.frac;
      out(r, c) = top + (bottom - top) * y.frac;
    }
  }
  return out;
}

AttributionMap resize_map(const AttributionMap& map, int target_rows, int target_cols) {
  Grid g = resize_bilinear(map.grid(), target_rows, target_cols);
  for (double& v : g.values()) v = std::clamp(v, 0.0, 1.0);
  return AttributionMap(std::move(g), map.source_height(), map.source_width(), map.degenerate());
}

Image mask_image(const Image& image, const Grid& weights) {
  if (weights.rows() != image.height() || weights.cols() != image.width())
    throw InvalidInput("mask is " + std::to_string(weights.rows()) + "x" + std::to_string(weights.cols()) +
                       " but image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()));
  Image out = image;
  const auto w = weights.values();
  for (int c = 0; c < image.channels(); ++c) {
    auto p = out.plane(c);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] *= w[i];
  }
  return out;
}

Image mask_image(const Image& image, const AttributionMap& map) { return mask_image(image, map.grid()); }

PixelRanking rank_pixels(const AttributionMap& map, RankOrder order) {
  PixelRanking ranking{order, map.rows(), map.cols(), {}};
  ranking.flat.resize(map.size());
  std::iota(ranking.flat.begin(), ranking.flat.end(), 0);
  const auto v = map.values();
  if (order == RankOrder::MoRF) {
    std::stable_sort(ranking.flat.begin(), ranking.flat.end(), [&](int a, int b) { return v[a] > v[b]; });
  } else {
    std::stable_sort(ranking.flat.begin(), ranking.flat.end(), [&](int a, int b) { return v[a] < v[b]; });
  }
  return ranking;
}

AttributionMap to_input_resolution(const AttributionMap& map, int rows, int cols) {
  if (map.rows() == rows && map.cols() == cols) return normalize_map(map);
  return normalize_map(resize_map(map, rows, cols));
}

}  // namespace camgauge
