#pragma once

#include <string>
#include <vector>

#include "meshsplat/rasterizer.hpp"

namespace meshsplat {

/// Row-major interleaved image with values nominally in [0, 1].
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

  std::size_t pixel_count() const { return std::size_t(width) * height; }
  double& at(int x, int y, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const { return data[(std::size_t(y) * width + x) * channels + c]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

Image rgb_image(const FrameBuffer& fb);
Image alpha_image(const FrameBuffer& fb);
Image depth_image(const FrameBuffer& fb);

/// 8- or 16-bit gray, gray+alpha, RGB or RGBA PNG; alpha channels are dropped.
/// Values are scaled to [0, 1].
Image load_png(const std::string& path);
/// 8-bit PNG, gray for 1 channel and RGB for 3. Values are clamped to [0, 1].
void save_png8(const std::string& path, const Image& img);
/// 16-bit gray PNG storing round(value * scale), clamped to [0, 65535].
void save_png16(const std::string& path, const Image& img, double scale);
/// Reads a 16-bit gray PNG back as raw_value / scale.
Image load_png16(const std::string& path, double scale);

}  // namespace meshsplat
