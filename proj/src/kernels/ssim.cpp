#include "rav/kernels/ssim.hpp"

#include <cmath>
#include <vector>

namespace rav::kernels {
namespace {

std::vector<double> window_taps(const SsimParams& p) {
  std::vector<double> taps(p.window);
  const double centre = 0.5 * (p.window - 1);
  double sum = 0.0;
  for (int i = 0; i < p.window; ++i) {
    const double d = i - centre;
    sum += taps[i] = std::exp(-0.5 * d * d / (p.sigma * p.sigma));
  }
  for (double& t : taps) t /= sum;
  return taps;
}

void check(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& p) {
  require(a.same_shape(b), "ssim: images differ in shape");
  require(p.window > 0 && p.window % 2 == 1, "ssim: window must be odd and positive");
  require(a.height() >= p.window && a.width() >= p.window, "ssim: image smaller than the window");
}

double ssim_value(double mx, double my, double sxx, double syy, double sxy, double c1, double c2) {
  const double vx = sxx - mx * mx;
  const double vy = syy - my * my;
  const double cov = sxy - mx * my;
  return ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace

double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& p) {
  check(a, b, p);
  const auto taps = window_taps(p);
  const int h = a.height(), w = a.width(), ch = a.channels();
  const int oh = h - p.window + 1, ow = w - p.window + 1;
  const double c1 = std::pow(p.k1 * p.dynamic_range, 2), c2 = std::pow(p.k2 * p.dynamic_range, 2);

  // Horizontal pass on the five moment images, then vertical pass per output row.
  const std::size_t plane = static_cast<std::size_t>(h) * ow;
  std::vector<double> hx(plane * ch), hy(plane * ch), hxx(plane * ch), hyy(plane * ch), hxy(plane * ch);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x)
      for (int c = 0; c < ch; ++c) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (int k = 0; k < p.window; ++k) {
          const double va = a.at(y, x + k, c), vb = b.at(y, x + k, c), t = taps[k];
          sx += t * va;
          sy += t * vb;
          sxx += t * va * va;
          syy += t * vb * vb;
          sxy += t * va * vb;
        }
        const std::size_t i = (static_cast<std::size_t>(y) * ow + x) * ch + c;
        hx[i] = sx, hy[i] = sy, hxx[i] = sxx, hyy[i] = syy, hxy[i] = sxy;
      }

  double total = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : total)
  for (int y = 0; y < oh; ++y) {
    double row_sum = 0.0;
    for (int x = 0; x < ow; ++x)
      for (int c = 0; c < ch; ++c) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int k = 0; k < p.window; ++k) {
          const std::size_t i = (static_cast<std::size_t>(y + k) * ow + x) * ch + c;
          const double t = taps[k];
          mx += t * hx[i];
          my += t * hy[i];
          sxx += t * hxx[i];
          syy += t * hyy[i];
          sxy += t * hxy[i];
        }
        row_sum += ssim_value(mx, my, sxx, syy, sxy, c1, c2);
      }
    total += row_sum;
  }
  return total / (static_cast<double>(oh) * ow * ch);
}

namespace reference {

// Direct 2-D window sums, no separability.
double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& p) {
  check(a, b, p);
  const auto taps = window_taps(p);
  const int oh = a.height() - p.window + 1, ow = a.width() - p.window + 1;
  const double c1 = std::pow(p.k1 * p.dynamic_range, 2), c2 = std::pow(p.k2 * p.dynamic_range, 2);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int j = 0; j < p.window; ++j)
          for (int i = 0; i < p.window; ++i) {
            const double t = taps[j] * taps[i];
            const double va = a.at(y + j, x + i, c), vb = b.at(y + j, x + i, c);
            mx += t * va;
            my += t * vb;
            sxx += t * va * va;
            syy += t * vb * vb;
            sxy += t * va * vb;
          }
        total += ssim_value(mx, my, sxx, syy, sxy, c1, c2);
      }
  return total / (static_cast<double>(oh) * ow * a.channels());
}

}  // namespace reference
}  // namespace rav::kernels
