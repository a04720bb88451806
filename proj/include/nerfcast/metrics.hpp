#pragma once

#include <optional>

#include "nerfcast/image.hpp"

namespace nerfcast {

struct MetricsRow {
  int frame_id = 0;
  double psnr = 0;
  double ssim = 0;
  std::optional<double> masked_psnr;
  std::optional<double> masked_ssim;
};

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1/MSE) over all channels; identical images cap at 99 dB.
double psnr(const Image& a, const Image& b);

// Wang et al. SSIM on the channel-mean grayscale: 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1, valid-region mean.
double ssim(const Image& a, const Image& b);

Image composite_on_white(const Image& img, const Mask& mask);

// Shiny-region metrics: both images composited onto white outside the mask.
// An empty mask reports the masked fields as absent.
MetricsRow masked_metrics(const Image& rendered, const Image& reference, const Mask& mask);

}  // namespace nerfcast
