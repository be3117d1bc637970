#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tela/math.hpp"

namespace tela {

// Row-major RGB image, values nominally in [0,1].
struct Image {
  int width = 0, height = 0;
  std::vector<double> data;  // width*height*3

  Image() = default;
  Image(int w, int h, const Vec3& fill = {})
      : width(w), height(h), data(static_cast<size_t>(w) * h * 3) {
    for (int i = 0; i < w * h; ++i) set_index(i, fill);
  }

  size_t pixels() const { return static_cast<size_t>(width) * height; }
  size_t values() const { return pixels() * 3; }

  Vec3 get(int x, int y) const {
    const double* p = &data[(static_cast<size_t>(y) * width + x) * 3];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, const Vec3& c) { set_index(static_cast<size_t>(y) * width + x, c); }
  void set_index(size_t i, const Vec3& c) {
    data[i * 3] = c.x;
    data[i * 3 + 1] = c.y;
    data[i * 3 + 2] = c.z;
  }
  Vec3 get_index(size_t i) const { return {data[i * 3], data[i * 3 + 1], data[i * 3 + 2]}; }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

// Single-channel image (alpha masks).
struct GrayImage {
  int width = 0, height = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  size_t pixels() const { return data.size(); }
  double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  double mean() const;
};

// round-half-up quantization to 8 bits, input clamped to [0,1]
uint8_t quantize_u8(double v);

enum class ImageFormat { kPpm, kPng };

// Binary P6 PPM with the exact header "P6\n{w} {h}\n255\n".
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// Minimal 8-bit RGB PNG (zlib-deflated, no filtering).
void write_png(const std::string& path, const Image& img);

void write_image(const std::string& path, const Image& img, ImageFormat format);
// picks the format from the file extension (.png -> PNG, anything else -> PPM)
void write_image_auto(const std::string& path, const Image& img);

double image_max_abs_diff(const Image& a, const Image& b);
double image_psnr(const Image& a, const Image& b);

// Bilinear resampling (pixel centers at half-integer coordinates).
Image resize_bilinear(const Image& img, int width, int height);

}  // namespace tela
