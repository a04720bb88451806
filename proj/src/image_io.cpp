#include "nerfcast/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "nerfcast/vec.hpp"

namespace nerfcast {

float srgb_to_linear(float v) {
  return v <= 0.04045f ? v / 12.92f : std::pow((v + 0.055f) / 1.055f, 2.4f);
}

float linear_to_srgb(float v) {
  v = clamp(v, 0.f, 1.f);
  return v <= 0.0031308f ? 12.92f * v : 1.055f * std::pow(v, 1.f / 2.4f) - 0.055f;
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png_bytes(const std::string& path, const std::vector<uint8_t>& bytes, int w, int h,
                     int color_type) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  int stride = color_type == PNG_COLOR_TYPE_RGB ? 3 * w : w;
  for (int y = 0; y < h; ++y)
    png_write_row(png, const_cast<uint8_t*>(bytes.data()) + size_t(y) * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png_bytes(const std::string& path, int& w, int& h, bool gray) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  w = int(png_get_image_width(png, info));
  h = int(png_get_image_height(png, info));

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  if (gray) {
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) png_set_rgb_to_gray(png, 1, -1, -1);
  } else {
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY) png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  int stride = gray ? w : 3 * w;
  std::vector<uint8_t> bytes(size_t(stride) * h);
  for (int y = 0; y < h; ++y) png_read_row(png, bytes.data() + size_t(y) * stride, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return bytes;
}

}  // namespace

void save_png(const std::string& path, const Image& linear) {
  std::vector<uint8_t> bytes(size_t(linear.width) * linear.height * 3);
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = uint8_t(std::lround(linear_to_srgb(linear.rgb[i]) * 255.f));
  write_png_bytes(path, bytes, linear.width, linear.height, PNG_COLOR_TYPE_RGB);
}

Image load_png(const std::string& path) {
  int w = 0, h = 0;
  std::vector<uint8_t> bytes = read_png_bytes(path, w, h, /*gray=*/false);
  Image img(w, h);
  for (size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = srgb_to_linear(bytes[i] / 255.f);
  return img;
}

void save_mask_png(const std::string& path, const Mask& mask) {
  write_png_bytes(path, mask.v, mask.width, mask.height, PNG_COLOR_TYPE_GRAY);
}

Mask load_mask_png(const std::string& path) {
  Mask m;
  m.v = read_png_bytes(path, m.width, m.height, /*gray=*/true);
  for (auto& v : m.v) v = v >= 128 ? 255 : 0;
  return m;
}

void save_pfm(const std::string& path, const Image& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);
  std::fprintf(fp.get(), "PF\n%d %d\n-1.0\n", img.width, img.height);
  // PFM rows are bottom-to-top
  for (int y = img.height - 1; y >= 0; --y)
    std::fwrite(img.px(0, y), sizeof(float), size_t(img.width) * 3, fp.get());
}

}  // namespace nerfcast
