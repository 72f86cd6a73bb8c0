#include "meshsplat/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace meshsplat {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
  int width = 0, height = 0, channels = 0, depth = 8;
  std::vector<std::uint16_t> samples;
};

RawPng read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("cannot open PNG: " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw Error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng: out of memory");
  }
  RawPng raw;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // host order on little-endian
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * raw.height);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = buffer.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  raw.samples.resize(std::size_t(raw.width) * raw.height * raw.channels);
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    if (raw.depth == 16) {
      std::uint16_t v;
      std::copy_n(buffer.data() + 2 * i, 2, reinterpret_cast<png_byte*>(&v));
      raw.samples[i] = v;
    } else {
      raw.samples[i] = buffer[i];
    }
  }
  return raw;
}

void write_png(const std::string& path, int width, int height, int channels, int depth,
               const std::vector<std::uint16_t>& samples) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot write PNG: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng: out of memory");
  }
  const std::size_t bytes = depth / 8;
  const std::size_t stride = std::size_t(width) * channels * bytes;
  std::vector<png_byte> buffer(stride * height);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = static_cast<png_byte>(samples[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<png_byte>(samples[i]);
    }
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + stride * y;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, depth, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image rgb_image(const FrameBuffer& fb) {
  Image img(fb.width, fb.height, 3);
  img.data = fb.rgb;
  return img;
}

Image alpha_image(const FrameBuffer& fb) {
  Image img(fb.width, fb.height, 1);
  img.data = fb.alpha;
  return img;
}

Image depth_image(const FrameBuffer& fb) {
  Image img(fb.width, fb.height, 1);
  img.data = fb.depth;
  return img;
}

Image load_png(const std::string& path) {
  const RawPng raw = read_png(path);
  if (raw.channels != 1 && raw.channels != 3) throw Error("unsupported PNG channel count in " + path);
  Image img(raw.width, raw.height, raw.channels);
  const double scale = raw.depth == 16 ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = raw.samples[i] / scale;
  return img;
}

void save_png8(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw Error("save_png8: need 1 or 3 channels");
  std::vector<std::uint16_t> s(img.data.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<std::uint16_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  write_png(path, img.width, img.height, img.channels, 8, s);
}

void save_png16(const std::string& path, const Image& img, double scale) {
  if (img.channels != 1) throw Error("save_png16: need 1 channel");
  std::vector<std::uint16_t> s(img.data.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<std::uint16_t>(std::clamp<long>(std::lround(img.data[i] * scale), 0, 65535));
  write_png(path, img.width, img.height, 1, 16, s);
}

Image load_png16(const std::string& path, double scale) {
  const RawPng raw = read_png(path);
  if (raw.channels != 1 || raw.depth != 16) throw Error("expected 16-bit gray PNG: " + path);
  Image img(raw.width, raw.height, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = raw.samples[i] / scale;
  return img;
}

}  // namespace meshsplat
