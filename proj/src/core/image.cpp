#include "rav/core/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rav {

std::string_view category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::contract_violation: return "contract-violation";
    case ErrorCategory::invalid_config: return "invalid-config";
    case ErrorCategory::missing_artifact: return "missing-artifact";
    case ErrorCategory::io_error: return "io-error";
    case ErrorCategory::format_error: return "format-error";
    case ErrorCategory::not_detectable: return "not-detectable";
    case ErrorCategory::internal: return "internal";
  }
  return "internal";
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::contract_violation: return 5;
    case ErrorCategory::invalid_config: return 2;
    case ErrorCategory::missing_artifact: return 3;
    case ErrorCategory::io_error: return 4;
    case ErrorCategory::format_error: return 6;
    case ErrorCategory::not_detectable: return 7;
    case ErrorCategory::internal: return 1;
  }
  return 1;
}

ImageBuffer::ImageBuffer(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  require(height >= 0 && width >= 0 && channels >= 0, "image dimensions must be non-negative");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageBuffer to_grayscale(const ImageBuffer& img) {
  if (img.channels() == 1) return img;
  require(img.channels() == 3, "grayscale conversion expects 1 or 3 channels");
  ImageBuffer out(img.height(), img.width(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(y, x, 0) =
          0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  return out;
}

ImageBuffer replicate_channels(const ImageBuffer& img, int channels) {
  if (img.channels() == channels) return img;
  require(img.channels() == 1, "channel replication expects a single-channel source");
  ImageBuffer out(img.height(), img.width(), channels);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < channels; ++c) out.at(y, x, c) = img.at(y, x, 0);
  return out;
}

ImageBuffer crop(const ImageBuffer& img, const PixelWindow& w) {
  require(w.inside(img.height(), img.width()), "crop window outside image bounds");
  ImageBuffer out(w.height, w.width, img.channels());
  for (int y = 0; y < w.height; ++y)
    for (int x = 0; x < w.width; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(w.y0 + y, w.x0 + x, c);
  return out;
}

ImageBuffer flip_horizontal(const ImageBuffer& img) {
  ImageBuffer out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c)
        out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
  return out;
}

ImageBuffer clamp01(ImageBuffer img) {
  for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int height, int width) {
  require(height > 0 && width > 0 && !img.empty(), "resize needs non-empty image and target");
  if (height == img.height() && width == img.width()) return img;
  ImageBuffer out(height, width, img.channels());
  const double sy = static_cast<double>(img.height()) / height;
  const double sx = static_cast<double>(img.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double tx = fx - x0;
      for (int c = 0; c < img.channels(); ++c) {
        const double top = img.at(y0, x0, c) * (1 - tx) + img.at(y0, x1, c) * tx;
        const double bot = img.at(y1, x0, c) * (1 - tx) + img.at(y1, x1, c) * tx;
        out.at(y, x, c) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

double mean_abs_difference(const ImageBuffer& a, const ImageBuffer& b) {
  require(a.same_shape(b), "mean_abs_difference: shape mismatch");
  if (a.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a.data()[i] - b.data()[i]);
  return sum / static_cast<double>(a.size());
}

}  // namespace rav
