#include "camgauge/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "camgauge/error.hpp"

namespace camgauge::png {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_rows(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
                const std::vector<std::vector<std::uint8_t>>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Raster read(const std::filesystem::path& path, bool force_rgb) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  const bool gray = !force_rgb && (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster r;
  r.width = static_cast<int>(image.width);
  r.height = static_cast<int>(image.height);
  r.channels = gray ? 1 : 3;
  r.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, r.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return r;
}

void write(const std::filesystem::path& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) throw InvalidInput("PNG rasters must have 1 or 3 channels");
  const std::size_t stride = static_cast<std::size_t>(raster.width) * raster.channels;
  if (raster.data.size() != stride * raster.height) throw InvalidInput("raster size mismatch");
  std::vector<std::vector<std::uint8_t>> rows(raster.height);
  for (int y = 0; y < raster.height; ++y)
    rows[y].assign(raster.data.begin() + y * stride, raster.data.begin() + (y + 1) * stride);
  write_rows(path, raster.width, raster.height, 8, raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
             rows);
}

void write_bitmask(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& bits) {
  if (bits.size() != static_cast<std::size_t>(width) * height) throw InvalidInput("bitmask size mismatch");
  std::vector<std::vector<std::uint8_t>> rows(height, std::vector<std::uint8_t>((width + 7) / 8, 0));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (bits[static_cast<std::size_t>(y) * width + x]) rows[y][x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
  write_rows(path, width, height, 1, PNG_COLOR_TYPE_GRAY, rows);
}

Raster to_raster(const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) throw InvalidInput("only gray or RGB images can be encoded");
  Raster r{image.width(), image.height(), image.channels(), {}};
  r.data.resize(image.plane_size() * image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    const auto p = image.plane(c);
    for (std::size_t i = 0; i < p.size(); ++i)
      r.data[i * image.channels() + c] = static_cast<std::uint8_t>(std::lround(std::clamp(p[i], 0.0, 1.0) * 255.0));
  }
  return r;
}

Image to_image(const Raster& raster) {
  Image img(raster.channels, raster.height, raster.width);
  for (int c = 0; c < raster.channels; ++c) {
    auto p = img.plane(c);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = raster.data[i * raster.channels + c] / 255.0;
  }
  return img;
}

}  // namespace camgauge::png
