#include "nerfcast/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nerfcast/array.hpp"

namespace nerfcast {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height)
    throw std::runtime_error(std::string(what) + ": image shapes differ, " +
                             shape_str(a.width, a.height) + " vs " + shape_str(b.width, b.height));
}

std::vector<double> to_gray(const Image& img) {
  std::vector<double> g(size_t(img.width) * img.height);
  for (size_t i = 0; i < g.size(); ++i)
    g[i] = (img.rgb[3 * i] + img.rgb[3 * i + 1] + img.rgb[3 * i + 2]) / 3.0;
  return g;
}

constexpr int kWin = 11;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWin);
  double sum = 0;
  for (int i = 0; i < kWin; ++i) {
    double d = i - (kWin - 1) / 2.0;
    k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable valid-region Gaussian filter.
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h, int& ow, int& oh) {
  static const std::vector<double> kernel = gaussian_kernel();
  ow = w - kWin + 1;
  oh = h - kWin + 1;
  std::vector<double> tmp(size_t(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += kernel[i] * in[size_t(y) * w + x + i];
      tmp[size_t(y) * ow + x] = acc;
    }
  std::vector<double> out(size_t(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += kernel[i] * tmp[size_t(y + i) * ow + x];
      out[size_t(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  double mse = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    double d = double(a.rgb[i]) - double(b.rgb[i]);
    mse += d * d;
  }
  mse /= double(a.rgb.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  if (a.width < kWin || a.height < kWin)
    throw std::runtime_error("ssim: image smaller than the 11x11 window");

  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  std::vector<double> x = to_gray(a), y = to_gray(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  int ow = 0, oh = 0;
  auto mu_x = filter_valid(x, a.width, a.height, ow, oh);
  auto mu_y = filter_valid(y, a.width, a.height, ow, oh);
  auto e_xx = filter_valid(xx, a.width, a.height, ow, oh);
  auto e_yy = filter_valid(yy, a.width, a.height, ow, oh);
  auto e_xy = filter_valid(xy, a.width, a.height, ow, oh);

  double acc = 0;
  for (size_t i = 0; i < mu_x.size(); ++i) {
    double vx = e_xx[i] - mu_x[i] * mu_x[i];
    double vy = e_yy[i] - mu_y[i] * mu_y[i];
    double cov = e_xy[i] - mu_x[i] * mu_y[i];
    acc += ((2 * mu_x[i] * mu_y[i] + c1) * (2 * cov + c2)) /
           ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (vx + vy + c2));
  }
  return acc / double(mu_x.size());
}

Image composite_on_white(const Image& img, const Mask& mask) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (!mask.at(x, y)) {
        float* px = out.px(x, y);
        px[0] = px[1] = px[2] = 1.f;
      }
  return out;
}

MetricsRow masked_metrics(const Image& rendered, const Image& reference, const Mask& mask) {
  require_same_shape(rendered, reference, "masked_metrics");
  if (mask.width != rendered.width || mask.height != rendered.height)
    throw std::runtime_error("masked_metrics: mask shape differs from the images");
  MetricsRow row;
  row.psnr = psnr(rendered, reference);
  row.ssim = ssim(rendered, reference);
  bool any = false;
  for (uint8_t v : mask.v)
    if (v) {
      any = true;
      break;
    }
  if (!any) return row;
  Image cr = composite_on_white(rendered, mask);
  Image cf = composite_on_white(reference, mask);
  row.masked_psnr = psnr(cr, cf);
  row.masked_ssim = ssim(cr, cf);
  return row;
}

}  // namespace nerfcast
