#include "camgauge/synthdata.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "camgauge/error.hpp"
#include "camgauge/png_io.hpp"

namespace camgauge {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x, y;
};

// Edge normals of the canonical triangle (base at the bottom, y grows downwards).
constexpr std::array<Vec2, 3> kTriangleNormals{{{0.0, 1.0}, {-0.86602540378443865, -0.5}, {0.86602540378443865, -0.5}}};

struct LocalFrame {
  double cy, cx, cos_t, sin_t;

  // Rotates an image-space offset into the shape's local frame.
  Vec2 to_local(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    return {cos_t * dx + sin_t * dy, -sin_t * dx + cos_t * dy};
  }
  Vec2 to_image(Vec2 q) const { return {cx + cos_t * q.x - sin_t * q.y, cy + sin_t * q.x + cos_t * q.y}; }
};

LocalFrame frame_of(const ShapeSpec& s) {
  const double t = s.rotation_deg * kPi / 180.0;
  return {s.center_row, s.center_col, std::cos(t), std::sin(t)};
}

bool inside_solid(ShapeKind kind, double scale, double inset, Vec2 q) {
  switch (kind) {
    case ShapeKind::Circle: {
      const double r = scale / 2.0 - inset;
      return r > 0.0 && q.x * q.x + q.y * q.y <= r * r;
    }
    case ShapeKind::Square: {
      const double h = scale / 2.0 - inset;
      return h > 0.0 && std::abs(q.x) <= h && std::abs(q.y) <= h;
    }
    case ShapeKind::Triangle: {
      const double r = scale / 3.0 - inset;  // inradius of an equilateral triangle of height `scale`
      if (r <= 0.0) return false;
      for (const Vec2& n : kTriangleNormals)
        if (q.x * n.x + q.y * n.y > r) return false;
      return true;
    }
  }
  return false;
}

bool inside_shape(const ShapeSpec& s, Vec2 q) {
  const ShapeKind kind = shape_kind(s.class_id);
  if (!inside_solid(kind, s.scale, 0.0, q)) return false;
  if (shape_filled(s.class_id)) return true;
  return !inside_solid(kind, s.scale, s.stroke, q);
}

struct Extent {
  double ymin, ymax, xmin, xmax;
};

// Axis-aligned bounding box of the shape in image coordinates.
Extent extent_of(const ShapeSpec& s) {
  const LocalFrame f = frame_of(s);
  std::vector<Vec2> corners;
  switch (shape_kind(s.class_id)) {
    case ShapeKind::Circle: {
      const double r = s.scale / 2.0;
      return {s.center_row - r, s.center_row + r, s.center_col - r, s.center_col + r};
    }
    case ShapeKind::Square: {
      const double h = s.scale / 2.0;
      corners = {{-h, -h}, {h, -h}, {h, h}, {-h, h}};
      break;
    }
    case ShapeKind::Triangle: {
      const double r = s.scale / 3.0;
      for (const Vec2& n : kTriangleNormals) corners.push_back({-2.0 * r * n.x, -2.0 * r * n.y});
      break;
    }
  }
  Extent e{1e300, -1e300, 1e300, -1e300};
  for (const Vec2& q : corners) {
    const Vec2 p = f.to_image(q);
    e.ymin = std::min(e.ymin, p.y);
    e.ymax = std::max(e.ymax, p.y);
    e.xmin = std::min(e.xmin, p.x);
    e.xmax = std::max(e.xmax, p.x);
  }
  return e;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(hh);
  const double f = hh - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0:
      return {v, t, p};
    case 1:
      return {q, v, p};
    case 2:
      return {p, v, t};
    case 3:
      return {p, q, v};
    case 4:
      return {t, p, v};
    default:
      return {v, p, q};
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t raster_hash(const png::Raster& r) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(r.data.data()), r.data.size()));
}

Image resize_image(const Image& src, int size) {
  if (src.height() == size && src.width() == size) return src;
  Image out(src.channels(), size, size);
  for (int c = 0; c < src.channels(); ++c) {
    const Grid g = resize_bilinear(src.channel(c), size, size);
    std::copy(g.values().begin(), g.values().end(), out.plane(c).begin());
  }
  return out;
}

}  // namespace

ShapeKind shape_kind(int class_id) {
  if (class_id < 0 || class_id >= kNumShapeClasses) throw InvalidInput("shape class id out of range");
  return static_cast<ShapeKind>(class_id / 2);
}

bool shape_filled(int class_id) {
  if (class_id < 0 || class_id >= kNumShapeClasses) throw InvalidInput("shape class id out of range");
  return class_id % 2 == 0;
}

std::string class_name(int class_id) {
  static const char* kinds[] = {"circle", "square", "triangle"};
  return std::string(kinds[static_cast<int>(shape_kind(class_id))]) + (shape_filled(class_id) ? "_filled" : "_empty");
}

std::vector<std::string> class_names() {
  std::vector<std::string> out;
  for (int c = 0; c < kNumShapeClasses; ++c) out.push_back(class_name(c));
  return out;
}

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Grid BinaryMask::to_grid() const {
  Grid g(rows, cols);
  for (std::size_t i = 0; i < bits.size(); ++i) g[i] = bits[i] ? 1.0 : 0.0;
  return g;
}

bool shape_inside(const ShapeSpec& spec, int height, int width) {
  const Extent e = extent_of(spec);
  return e.ymin >= 0.0 && e.xmin >= 0.0 && e.ymax <= height && e.xmax <= width;
}

Grid shape_coverage(const ShapeSpec& spec, int height, int width) {
  if (!(spec.scale > 0.0)) throw InvalidInput("shape scale must be positive");
  if (!shape_inside(spec, height, width)) throw InvalidInput("shape extends beyond the image");
  const Extent e = extent_of(spec);
  const LocalFrame f = frame_of(spec);
  Grid cov(height, width, 0.0);
  const int r0 = std::max(0, static_cast<int>(std::floor(e.ymin)));
  const int r1 = std::min(height - 1, static_cast<int>(std::ceil(e.ymax)));
  const int c0 = std::max(0, static_cast<int>(std::floor(e.xmin)));
  const int c1 = std::min(width - 1, static_cast<int>(std::ceil(e.xmax)));
  constexpr int kSub = 4;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      int hits = 0;
      for (int i = 0; i < kSub; ++i) {
        const double y = r + (i + 0.5) / kSub;
        for (int j = 0; j < kSub; ++j) {
          const double x = c + (j + 0.5) / kSub;
          if (inside_shape(spec, f.to_local(y, x))) ++hits;
        }
      }
      cov(r, c) = static_cast<double>(hits) / (kSub * kSub);
    }
  }
  return cov;
}

BinaryMask rasterize_shape(const ShapeSpec& spec, int height, int width) {
  const Grid cov = shape_coverage(spec, height, width);
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < cov.size(); ++i) m.bits[i] = cov[i] > 0.5 ? 1 : 0;
  return m;
}

void GeneratorConfig::validate() const {
  if (image_size < 8) throw InvalidInput("image_size must be >= 8");
  if (!(scale_min > 0.0) || !(scale_max >= scale_min)) throw InvalidInput("scale range must satisfy 0 < min <= max");
  if (!(min_stroke > 0.0) || !(stroke_fraction >= 0.0)) throw InvalidInput("stroke settings must be positive");
  if (max_attempts < 1) throw InvalidInput("max_attempts must be >= 1");
}

Image procedural_background(std::uint64_t seed, int size, double contrast) {
  if (!(contrast >= 0.0)) throw InvalidInput("background contrast must be >= 0");
  static constexpr int kCells[] = {56, 28, 14, 7};
  static constexpr double kAmps[] = {1.0, 0.6, 0.4, 0.25};
  Image img(3, size, size, 0.0);
  Rng rng(derive_seed(seed, {fnv1a64("background")}));
  double amp_total = 0.0;
  for (double a : kAmps) amp_total += a;
  for (int ch = 0; ch < 3; ++ch) {
    auto plane = img.plane(ch);
    for (int o = 0; o < 4; ++o) {
      const int cell = kCells[o];
      const int n = size / cell + 2;
      std::vector<double> lattice(static_cast<std::size_t>(n) * n);
      for (double& v : lattice) v = rng.uniform();
      for (int r = 0; r < size; ++r) {
        const double fy = static_cast<double>(r) / cell;
        const int y0 = static_cast<int>(fy);
        double ty = fy - y0;
        ty = ty * ty * (3.0 - 2.0 * ty);
        for (int c = 0; c < size; ++c) {
          const double fx = static_cast<double>(c) / cell;
          const int x0 = static_cast<int>(fx);
          double tx = fx - x0;
          tx = tx * tx * (3.0 - 2.0 * tx);
          const double a = lattice[y0 * n + x0], b = lattice[y0 * n + x0 + 1];
          const double cc = lattice[(y0 + 1) * n + x0], d = lattice[(y0 + 1) * n + x0 + 1];
          const double top = a + (b - a) * tx;
          const double bottom = cc + (d - cc) * tx;
          plane[static_cast<std::size_t>(r) * size + c] += kAmps[o] * (top + (bottom - top) * ty);
        }
      }
    }
    for (double& v : plane) v = std::clamp(0.5 + contrast * (v / amp_total - 0.5), 0.0, 1.0);
  }
  return img;
}

ShapeSample generate_sample(int class_id, const Image& background, Rng& rng, const GeneratorConfig& config) {
  config.validate();
  const int size = config.image_size;
  if (background.channels() != 3 || background.height() != size || background.width() != size)
    throw InvalidInput("background must be a 3-channel image at the target size");
  (void)shape_kind(class_id);

  ShapeSpec spec;
  spec.class_id = class_id;
  bool placed = false;
  for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
    spec.rotation_deg = rng.uniform(0.0, 360.0);
    spec.scale = rng.uniform(config.scale_min, config.scale_max);
    spec.stroke = std::max(config.min_stroke, config.stroke_fraction * spec.scale);
    spec.center_row = 0.0;
    spec.center_col = 0.0;
    const Extent e = extent_of(spec);
    const double row_lo = -e.ymin, row_hi = size - e.ymax;
    const double col_lo = -e.xmin, col_hi = size - e.xmax;
    if (row_hi < row_lo || col_hi < col_lo) continue;
    spec.center_row = rng.uniform(row_lo, row_hi);
    spec.center_col = rng.uniform(col_lo, col_hi);
    placed = shape_inside(spec, size, size);
  }
  if (!placed) throw GenerationError("could not place shape inside the image after " +
                                     std::to_string(config.max_attempts) + " attempts");
  spec.color = hsv_to_rgb(rng.uniform(), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0));

  const Grid cov = shape_coverage(spec, size, size);
  ShapeSample sample;
  sample.class_id = class_id;
  sample.spec = spec;
  sample.image = background;
  sample.gt_mask = BinaryMask(size, size);
  for (int ch = 0; ch < 3; ++ch) {
    auto p = sample.image.plane(ch);
    for (std::size_t i = 0; i < p.size(); ++i)
      if (cov[i] > 0.0) p[i] = p[i] * (1.0 - cov[i]) + spec.color[ch] * cov[i];
  }
  for (std::size_t i = 0; i < cov.size(); ++i) sample.gt_mask.bits[i] = cov[i] > 0.5 ? 1 : 0;
  return sample;
}

std::vector<const SampleRecord*> DatasetManifest::split(Split s) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : samples)
    if (r.split == s) out.push_back(&r);
  return out;
}

namespace {

struct BackgroundPool {
  std::vector<std::string> ids;
  std::vector<Image> images;
};

void build_pools(const DatasetConfig& config, DatasetManifest& manifest, BackgroundPool& train, BackgroundPool& test) {
  const int size = config.generator.image_size;
  std::vector<std::filesystem::path> files;
  if (config.backgrounds) {
    if (!std::filesystem::is_directory(*config.backgrounds))
      throw IoError("background directory not found: " + config.backgrounds->string());
    for (const auto& entry : std::filesystem::directory_iterator(*config.backgrounds)) {
      auto ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  }

  if (files.size() >= 2) {
    std::vector<std::pair<std::string, Image>> loaded;
    for (const auto& f : files) {
      png::Raster raster = png::read(f);
      Image img = resize_image(png::to_image(raster), size);
      const std::string id = f.stem().string();
      manifest.background_hashes[id] = hex64(raster_hash(raster));
      loaded.emplace_back(id, std::move(img));
    }
    std::vector<std::size_t> order(loaded.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, {fnv1a64("background-split")}));
    rng.shuffle(order.begin(), order.end());
    const auto n_test = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(config.test_background_fraction * loaded.size())), 1,
        loaded.size() - 1);
    for (std::size_t i = 0; i < order.size(); ++i) {
      BackgroundPool& pool = i < n_test ? test : train;
      pool.ids.push_back(loaded[order[i]].first);
      pool.images.push_back(std::move(loaded[order[i]].second));
    }
    // Pools are listed in id order so manifests read naturally.
    for (BackgroundPool* pool : {&train, &test}) {
      std::vector<std::size_t> idx(pool->ids.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pool->ids[a] < pool->ids[b]; });
      BackgroundPool sorted;
      for (std::size_t i : idx) {
        sorted.ids.push_back(pool->ids[i]);
        sorted.images.push_back(std::move(pool->images[i]));
      }
      *pool = std::move(sorted);
    }
  } else {
    if (!config.procedural_fallback)
      throw GenerationError("need at least 2 background images (found " + std::to_string(files.size()) +
                            ") and procedural fallback is disabled");
    if (config.procedural_train_backgrounds < 1 || config.procedural_test_backgrounds < 1)
      throw InvalidInput("procedural background pools must be nonempty");
    auto fill = [&](BackgroundPool& pool, Split split, int count) {
      for (int i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "proc-%s-%03d", std::string(to_string(split)).c_str(), i);
        Image img = procedural_background(
            derive_seed(config.seed, {fnv1a64("procedural"), static_cast<std::uint64_t>(split),
                                      static_cast<std::uint64_t>(i)}),
            size, config.procedural_contrast);
        manifest.background_hashes[id] = hex64(raster_hash(png::to_raster(img)));
        pool.ids.push_back(id);
        pool.images.push_back(std::move(img));
      }
    };
    fill(train, Split::Train, config.procedural_train_backgrounds);
    fill(test, Split::Test, config.procedural_test_backgrounds);
  }
  manifest.train_backgrounds = train.ids;
  manifest.test_backgrounds = test.ids;
}

nlohmann::json spec_to_json(const ShapeSpec& s) {
  return {{"class_id", s.class_id},     {"color", s.color},           {"rotation_deg", s.rotation_deg},
          {"scale", s.scale},           {"center_row", s.center_row}, {"center_col", s.center_col},
          {"stroke", s.stroke}};
}

ShapeSpec spec_from_json(const nlohmann::json& j) {
  ShapeSpec s;
  s.class_id = j.at("class_id").get<int>();
  s.color = j.at("color").get<std::array<double, 3>>();
  s.rotation_deg = j.at("rotation_deg").get<double>();
  s.scale = j.at("scale").get<double>();
  s.center_row = j.at("center_row").get<double>();
  s.center_col = j.at("center_col").get<double>();
  s.stroke = j.at("stroke").get<double>();
  return s;
}

}  // namespace

DatasetManifest generate_dataset(const DatasetConfig& config) {
  config.generator.validate();
  if (config.train_per_class < 0 || config.test_per_class < 0) throw InvalidInput("per-class counts must be >= 0");
  DatasetManifest manifest;
  manifest.seed = config.seed;
  manifest.image_size = config.generator.image_size;
  BackgroundPool train_pool, test_pool;
  build_pools(config, manifest, train_pool, test_pool);

  struct Job {
    Split split;
    int index;
  };
  std::vector<Job> jobs;
  for (int i = 0; i < config.train_per_class * kNumShapeClasses; ++i) jobs.push_back({Split::Train, i});
  for (int i = 0; i < config.test_per_class * kNumShapeClasses; ++i) jobs.push_back({Split::Test, i});
  manifest.samples.resize(jobs.size());

  auto run_job = [&](std::size_t j) {
    const Job job = jobs[j];
    const BackgroundPool& pool = job.split == Split::Train ? train_pool : test_pool;
    const int class_id = job.index % kNumShapeClasses;
    const std::uint64_t seed = derive_seed(config.seed, {fnv1a64("sample"), static_cast<std::uint64_t>(job.split),
                                                         static_cast<std::uint64_t>(job.index)});
    Rng rng(seed);
    const std::size_t bg = rng.below(pool.ids.size());
    ShapeSample s = generate_sample(class_id, pool.images[bg], rng, config.generator);

    char id[32];
    std::snprintf(id, sizeof id, "%s_%05d", std::string(to_string(job.split)).c_str(), job.index);
    SampleRecord rec;
    rec.id = id;
    rec.split = job.split;
    rec.class_id = class_id;
    const std::string dir = std::string(to_string(job.split));
    rec.image_path = dir + "/images/" + rec.id + ".png";
    rec.mask_path = dir + "/masks/" + rec.id + ".png";
    rec.background_id = pool.ids[bg];
    rec.seed = seed;
    rec.spec = s.spec;
    rec.mask_area = s.gt_mask.count();
    png::write(config.out / rec.image_path, png::to_raster(s.image));
    png::write_bitmask(config.out / rec.mask_path, s.gt_mask.cols, s.gt_mask.rows, s.gt_mask.bits);
    manifest.samples[j] = std::move(rec);
  };

  std::filesystem::create_directories(config.out);
  const int workers = std::max(1, config.workers);
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
          try {
            run_job(j);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::ofstream out(config.out / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + config.out.string());
  out << manifest_to_json(manifest);
  return manifest;
}

std::string manifest_to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& r : m.samples) {
    samples.push_back({{"id", r.id},
                       {"split", std::string(to_string(r.split))},
                       {"class_id", r.class_id},
                       {"class_name", class_name(r.class_id)},
                       {"image", r.image_path},
                       {"mask", r.mask_path},
                       {"background_id", r.background_id},
                       {"seed", r.seed},
                       {"mask_area", r.mask_area},
                       {"spec", spec_to_json(r.spec)}});
  }
  nlohmann::json j = {{"format", "camgauge-shapes-v1"},
                      {"seed", m.seed},
                      {"image_size", m.image_size},
                      {"class_names", class_names()},
                      {"backgrounds",
                       {{"train", m.train_backgrounds}, {"test", m.test_backgrounds}, {"hashes", m.background_hashes}}},
                      {"samples", samples}};
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt manifest: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.image_size = j.at("image_size").get<int>();
    const auto& bg = j.at("backgrounds");
    m.train_backgrounds = bg.at("train").get<std::vector<std::string>>();
    m.test_backgrounds = bg.at("test").get<std::vector<std::string>>();
    m.background_hashes = bg.at("hashes").get<std::map<std::string, std::string>>();
    for (const auto& s : j.at("samples")) {
      SampleRecord r;
      r.id = s.at("id").get<std::string>();
      r.split = s.at("split").get<std::string>() == "train" ? Split::Train : Split::Test;
      r.class_id = s.at("class_id").get<int>();
      r.image_path = s.at("image").get<std::string>();
      r.mask_path = s.at("mask").get<std::string>();
      r.background_id = s.at("background_id").get<std::string>();
      r.seed = s.at("seed").get<std::uint64_t>();
      r.mask_area = s.at("mask_area").get<std::size_t>();
      r.spec = spec_from_json(s.at("spec"));
      m.samples.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt manifest: ") + e.what());
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("dataset manifest not found in " + root.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

Image load_sample_image(const std::filesystem::path& root, const SampleRecord& record) {
  return png::to_image(png::read(root / record.image_path));
}

BinaryMask load_sample_mask(const std::filesystem::path& root, const SampleRecord& record) {
  const png::Raster r = png::read(root / record.mask_path, false);
  BinaryMask m(r.height, r.width);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = r.data[i * r.channels] > 127 ? 1 : 0;
  return m;
}

}  // namespace camgauge
