#include "cmwnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "cmwnet/errors.hpp"

namespace cmwnet::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void on_error(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

}  // namespace

PngImage read_png(const std::filesystem::path& path, std::size_t channels) {
  if (channels != 1 && channels != 3) throw DataError("read_png: channels must be 1 or 3");
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("not a PNG file: " + path.string());
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_error, on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialization failed");
  }
  PngImage out;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("cannot decode " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool is_gray = (color & PNG_COLOR_MASK_COLOR) == 0;
  if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
  if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (out.channels != channels) {
    throw DataError("unexpected channel layout in " + path.string());
  }
  const std::size_t n = out.width * out.height * out.channels;
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      out.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
  }
  return out;
}

void write_png(const std::filesystem::path& path, const PngImage& image) {
  if ((image.channels != 1 && image.channels != 3) ||
      (image.bit_depth != 8 && image.bit_depth != 16) ||
      image.samples.size() != image.width * image.height * image.channels) {
    throw DataError("write_png: malformed image for " + path.string());
  }
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot write " + path.string());
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_error, on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialization failed");
  }
  const std::size_t bytes = image.bit_depth / 8;
  const std::size_t rowbytes = image.width * image.channels * bytes;
  std::vector<unsigned char> buffer(rowbytes * image.height);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = static_cast<unsigned char>(image.samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(image.samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(image.samples[i]);
    }
  }
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("cannot encode " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), image.bit_depth,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> to_tensor(const PngImage& image) {
  Tensor<float> t({image.channels, image.height, image.width});
  const float scale = static_cast<float>(image.max_value());
  const std::size_t plane = image.width * image.height;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < image.channels; ++c) {
      t[c * plane + p] = static_cast<float>(image.samples[p * image.channels + c]) / scale;
    }
  }
  return t;
}

PngImage from_tensor(const Tensor<float>& t, int bit_depth) {
  if (t.rank() != 3 || (t.channels() != 1 && t.channels() != 3)) {
    throw ShapeError("from_tensor needs a 1- or 3-channel CxHxW tensor, got " + shape_string(t.shape()));
  }
  PngImage im;
  im.width = t.width();
  im.height = t.height();
  im.channels = t.channels();
  im.bit_depth = bit_depth;
  const double scale = im.max_value();
  const std::size_t plane = t.plane();
  im.samples.resize(plane * im.channels);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < im.channels; ++c) {
      const double v = std::clamp(static_cast<double>(t[c * plane + p]), 0.0, 1.0);
      im.samples[p * im.channels + c] = static_cast<std::uint16_t>(std::lround(v * scale));
    }
  }
  return im;
}

PngImage from_map(const Tensor<double>& map) {
  if (map.rank() != 2) throw ShapeError("from_map needs an HxW map");
  PngImage im;
  im.height = map.dim(0);
  im.width = map.dim(1);
  im.channels = 1;
  im.samples.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    im.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(map[i], 0.0, 1.0) * 255.0));
  }
  return im;
}

}  // namespace cmwnet::io
