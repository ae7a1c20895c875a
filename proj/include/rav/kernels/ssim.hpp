#pragma once

#include "rav/core/image.hpp"

namespace rav::kernels {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over all fully-contained windows and all channels.
double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& params = {});

namespace reference {
double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& params = {});
}

}  // namespace rav::kernels
