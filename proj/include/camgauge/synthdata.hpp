#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "camgauge/core.hpp"
#include "camgauge/rng.hpp"

namespace camgauge {

enum class ShapeKind { Circle, Square, Triangle };
enum class Split { Train, Test };

inline constexpr int kNumShapeClasses = 6;

/// Class ids: 0 circle_filled, 1 circle_empty, 2 square_filled, 3 square_empty,
/// 4 triangle_filled, 5 triangle_empty.
ShapeKind shape_kind(int class_id);
bool shape_filled(int class_id);
std::string class_name(int class_id);
std::vector<std::string> class_names();
std::string_view to_string(Split split);

/// Geometry of one shape in pixel coordinates (x = column, y = row; pixel
/// (r, c) covers [r, r+1) x [c, c+1)). `scale` is the circle diameter, the
/// square side, or the equilateral triangle height. `stroke` applies to
/// empty shapes only.
struct ShapeSpec {
  int class_id = 0;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  double rotation_deg = 0.0;
  double scale = 32.0;
  double center_row = 0.0;
  double center_col = 0.0;
  double stroke = 2.0;
};

struct BinaryMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int r, int c) : rows(r), cols(c), bits(static_cast<std::size_t>(r) * c, 0) {}
  bool operator()(int r, int c) const { return bits[static_cast<std::size_t>(r) * cols + c] != 0; }
  std::size_t count() const;
  Grid to_grid() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// True when the shape's every point lies within an h x w image.
bool shape_inside(const ShapeSpec& spec, int height, int width);

/// Fraction of 4x4 supersamples per pixel covered by the shape. Throws InvalidInput when out of bounds.
Grid shape_coverage(const ShapeSpec& spec, int height, int width);

/// Binary foreground: coverage > 0.5.
BinaryMask rasterize_shape(const ShapeSpec& spec, int height, int width);

struct GeneratorConfig {
  int image_size = 224;
  double scale_min = 16.0;
  double scale_max = 128.0;
  double stroke_fraction = 0.06;
  double min_stroke = 2.0;
  int max_attempts = 100;

  void validate() const;
};

struct ShapeSample {
  Image image;
  BinaryMask gt_mask;
  int class_id = 0;
  ShapeSpec spec;
  std::string background_id;
  Split split = Split::Train;
};

/// Seeded multi-octave value-noise texture, RGB, size x size. Each channel is
/// 0.5 + contrast * (noise - 0.5), clamped to [0, 1].
Image procedural_background(std::uint64_t seed, int size, double contrast = 1.0);

/// Samples a pose/colour from `rng`, composites the anti-aliased shape onto
/// `background` and rasterizes the ground-truth mask. Throws GenerationError
/// if containment fails `max_attempts` times.
ShapeSample generate_sample(int class_id, const Image& background, Rng& rng, const GeneratorConfig& config = {});

struct DatasetConfig {
  std::filesystem::path out;
  std::optional<std::filesystem::path> backgrounds;  // directory of PNGs
  std::uint64_t seed = 0;
  int train_per_class = 600;
  int test_per_class = 100;
  GeneratorConfig generator;
  bool procedural_fallback = true;
  int procedural_train_backgrounds = 64;
  int procedural_test_backgrounds = 16;
  double procedural_contrast = 0.6;  // 1.0 keeps the raw noise range
  double test_background_fraction = 0.2;  // share of a user directory held out for test
  int workers = 1;
};

struct SampleRecord {
  std::string id;
  Split split = Split::Train;
  int class_id = 0;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;
  std::string background_id;
  std::uint64_t seed = 0;
  ShapeSpec spec;
  std::size_t mask_area = 0;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int image_size = 224;
  std::vector<std::string> train_backgrounds;
  std::vector<std::string> test_backgrounds;
  std::map<std::string, std::string> background_hashes;
  std::vector<SampleRecord> samples;

  std::vector<const SampleRecord*> split(Split s) const;
};

/// Generates images, masks and manifest.json under config.out:
/// {train,test}/{images,masks}/<id>.png. Train and test draw from disjoint
/// background pools; all classes share the pool of their split.
DatasetManifest generate_dataset(const DatasetConfig& config);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
/// Reads <root>/manifest.json. Throws IoError.
DatasetManifest load_manifest(const std::filesystem::path& root);

Image load_sample_image(const std::filesystem::path& root, const SampleRecord& record);
BinaryMask load_sample_mask(const std::filesystem::path& root, const SampleRecord& record);

}  // namespace camgauge
