#include "rav/kernels/image_ops.hpp"

#include <algorithm>
#include <cmath>

namespace rav::kernels {
namespace {

double half_diagonal(int height, int width) { return 0.5 * std::hypot(height, width); }

double bilinear(const ImageBuffer& img, double fy, double fx, int c) {
  fy = std::clamp(fy, 0.0, img.height() - 1.0);
  fx = std::clamp(fx, 0.0, img.width() - 1.0);
  const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
  const int y1 = std::min(y0 + 1, img.height() - 1), x1 = std::min(x0 + 1, img.width() - 1);
  const double ty = fy - y0, tx = fx - x0;
  const double top = img.at(y0, x0, c) * (1 - tx) + img.at(y0, x1, c) * tx;
  const double bot = img.at(y1, x0, c) * (1 - tx) + img.at(y1, x1, c) * tx;
  return top * (1 - ty) + bot * ty;
}

// Source position (row, col) that output pixel (y, x) samples.
void distort_source(int y, int x, int h, int w, double k1, double k2, double& sy, double& sx) {
  const double dx = (x + 0.5) - 0.5 * w;
  const double dy = (y + 0.5) - 0.5 * h;
  const double hd = half_diagonal(h, w);
  const double r2 = (dx * dx + dy * dy) / (hd * hd);
  const double scale = 1.0 + k1 * r2 + k2 * r2 * r2;
  sx = dx * scale + 0.5 * w - 0.5;
  sy = dy * scale + 0.5 * h - 0.5;
}

}  // namespace

double normalized_radius(int x, int y, int height, int width) {
  const double dx = (x + 0.5) - 0.5 * width;
  const double dy = (y + 0.5) - 0.5 * height;
  return std::hypot(dx, dy) / half_diagonal(height, width);
}

std::vector<double> gaussian_taps(double sigma) {
  require(sigma >= 0.0 && std::isfinite(sigma), "blur sigma must be finite and non-negative");
  if (sigma == 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& t : taps) t /= sum;
  return taps;
}

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  const auto taps = gaussian_taps(sigma);
  if (taps.size() == 1) return img;
  const int radius = static_cast<int>(taps.size() / 2);
  const int h = img.height(), w = img.width(), ch = img.channels();
  ImageBuffer tmp(h, w, ch), out(h, w, ch);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += taps[k + radius] * img.at(y, std::clamp(x + k, 0, w - 1), c);
        tmp.at(y, x, c) = acc;
      }
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += taps[k + radius] * tmp.at(std::clamp(y + k, 0, h - 1), x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

ImageBuffer radial_distort(const ImageBuffer& img, double k1, double k2) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  ImageBuffer out(h, w, ch);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sy, sx;
      distort_source(y, x, h, w, k1, k2, sy, sx);
      for (int c = 0; c < ch; ++c) out.at(y, x, c) = bilinear(img, sy, sx, c);
    }
  return out;
}

ImageBuffer vignette(const ImageBuffer& img, double strength) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  ImageBuffer out(h, w, ch);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r = normalized_radius(x, y, h, w);
      const double gain = std::max(0.0, 1.0 - strength * r * r);
      for (int c = 0; c < ch; ++c) out.at(y, x, c) = img.at(y, x, c) * gain;
    }
  return out;
}

namespace reference {

// Direct 2-D convolution with the outer-product kernel.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  const auto taps = gaussian_taps(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  const int h = img.height(), w = img.width(), ch = img.channels();
  ImageBuffer out(h, w, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int j = -radius; j <= radius; ++j)
          for (int i = -radius; i <= radius; ++i)
            acc += taps[j + radius] * taps[i + radius] *
                   img.at(std::clamp(y + j, 0, h - 1), std::clamp(x + i, 0, w - 1), c);
        out.at(y, x, c) = acc;
      }
  return out;
}

ImageBuffer radial_distort(const ImageBuffer& img, double k1, double k2) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  ImageBuffer out(h, w, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sy, sx;
      distort_source(y, x, h, w, k1, k2, sy, sx);
      for (int c = 0; c < ch; ++c) out.at(y, x, c) = bilinear(img, sy, sx, c);
    }
  return out;
}

ImageBuffer vignette(const ImageBuffer& img, double strength) {
  ImageBuffer out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double r = normalized_radius(x, y, img.height(), img.width());
      for (int c = 0; c < img.channels(); ++c)
        out.at(y, x, c) *= std::max(0.0, 1.0 - strength * r * r);
    }
  return out;
}

}  // namespace reference
}  // namespace rav::kernels
