#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nerfcast {

// Linear-light RGB image, row-major, values nominally in [0,1].
struct Image {
  int width = 0, height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(size_t(w) * h * 3, 0.f) {}

  float* px(int x, int y) { return rgb.data() + (size_t(y) * width + x) * 3; }
  const float* px(int x, int y) const { return rgb.data() + (size_t(y) * width + x) * 3; }
};

// 0/255 binary mask.
struct Mask {
  int width = 0, height = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), v(size_t(w) * h, 0) {}
  uint8_t& at(int x, int y) { return v[size_t(y) * width + x]; }
  uint8_t at(int x, int y) const { return v[size_t(y) * width + x]; }
};

float srgb_to_linear(float v);
float linear_to_srgb(float v);

// 8-bit PNGs carry sRGB; images in memory are linear.
void save_png(const std::string& path, const Image& linear);
Image load_png(const std::string& path);
void save_mask_png(const std::string& path, const Mask& mask);
Mask load_mask_png(const std::string& path);

// 32-bit float PFM for HDR diagnostics.
void save_pfm(const std::string& path, const Image& img);

}  // namespace nerfcast
