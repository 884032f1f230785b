#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace camgauge {

/// Row-major 2-D grid of reals.
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, double fill = 0.0);
  Grid(int rows, int cols, std::vector<double> values);
  Grid(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool same_shape(const Grid& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

/// Channels x height x width image, channel-major, values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0);
  Image(int channels, int height, int width, std::vector<double> pixels);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  double& at(int c, int r, int col) { return pixels_[c * plane_size() + static_cast<std::size_t>(r) * width_ + col]; }
  double at(int c, int r, int col) const {
    return pixels_[c * plane_size() + static_cast<std::size_t>(r) * width_ + col];
  }

  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }
  std::span<double> plane(int c) { return std::span<double>(pixels_).subspan(c * plane_size(), plane_size()); }
  std::span<const double> plane(int c) const {
    return std::span<const double>(pixels_).subspan(c * plane_size(), plane_size());
  }

  Grid channel(int c) const;
  bool all_finite() const;
  friend bool operator==(const Image&, const Image&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

/// Normalized importance map in [0, 1]. Tagged with the spatial size of the
/// layer it was computed from; `degenerate` marks a map that collapsed to a
/// constant before normalization.
class AttributionMap {
 public:
  AttributionMap() = default;
  AttributionMap(Grid values, int source_height, int source_width, bool degenerate = false)
      : grid_(std::move(values)), source_height_(source_height), source_width_(source_width),
        degenerate_(degenerate) {}

  int rows() const { return grid_.rows(); }
  int cols() const { return grid_.cols(); }
  std::size_t size() const { return grid_.size(); }
  double operator()(int r, int c) const { return grid_(r, c); }
  double operator[](std::size_t i) const { return grid_[i]; }
  std::span<const double> values() const { return grid_.values(); }
  const Grid& grid() const { return grid_; }

  int source_height() const { return source_height_; }
  int source_width() const { return source_width_; }
  bool degenerate() const { return degenerate_; }
  void mark_degenerate() { degenerate_ = true; }

 private:
  Grid grid_;
  int source_height_ = 0;
  int source_width_ = 0;
  bool degenerate_ = false;
};

enum class RankOrder { MoRF, LeRF };

struct Pixel {
  int row;
  int col;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Permutation of all pixels of a map: MoRF by non-increasing value, LeRF by
/// non-decreasing value, ties by ascending row-major index.
struct PixelRanking {
  RankOrder order = RankOrder::MoRF;
  int rows = 0;
  int cols = 0;
  std::vector<int> flat;  // row-major pixel indices in rank order

  Pixel at(std::size_t i) const { return {flat[i] / cols, flat[i] % cols}; }
  std::size_t size() const { return flat.size(); }
};

/// Min-max rescale to [0, 1]. A constant grid maps to zeros and is flagged degenerate.
/// Throws InvalidInput on non-finite values.
AttributionMap normalize_map(const Grid& raw);
AttributionMap normalize_map(const AttributionMap& map);

/// Bilinear resampling with half-pixel centers (no corner alignment). Values are not clamped.
Grid resize_bilinear(const Grid& src, int target_rows, int target_cols);

/// Bilinear resize of a normalized map; output is clamped to [0, 1] and keeps the source tag.
AttributionMap resize_map(const AttributionMap& map, int target_rows, int target_cols);

/// Multiplies each channel of `image` element-wise by `map`.
Image mask_image(const Image& image, const AttributionMap& map);
Image mask_image(const Image& image, const Grid& weights);

PixelRanking rank_pixels(const AttributionMap& map, RankOrder order);

/// Resizes to (rows, cols) if needed, then normalizes.
AttributionMap to_input_resolution(const AttributionMap& map, int rows, int cols);

}  // namespace camgauge
