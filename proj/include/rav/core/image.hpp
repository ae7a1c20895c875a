#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rav/core/error.hpp"

namespace rav {

/// Dense H x W x C image with interleaved channels, values nominally in [0, 1].
///
/// Storage is double precision so that metric identities (PSNR closed forms,
/// SSIM self-similarity) hold to tight tolerances.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const ImageBuffer& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Integer pixel rectangle [x0, x0 + width) x [y0, y0 + height).
struct PixelWindow {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;

  bool inside(int image_height, int image_width) const {
    return x0 >= 0 && y0 >= 0 && width > 0 && height > 0 && x0 + width <= image_width &&
           y0 + height <= image_height;
  }
  friend bool operator==(const PixelWindow&, const PixelWindow&) = default;
};

ImageBuffer to_grayscale(const ImageBuffer& img);          // luma, 1 channel
ImageBuffer replicate_channels(const ImageBuffer& img, int channels);
ImageBuffer crop(const ImageBuffer& img, const PixelWindow& window);
ImageBuffer flip_horizontal(const ImageBuffer& img);
ImageBuffer clamp01(ImageBuffer img);
/// Bilinear resize with pixel-center alignment; identity when sizes match.
ImageBuffer resize_bilinear(const ImageBuffer& img, int height, int width);

double mean_abs_difference(const ImageBuffer& a, const ImageBuffer& b);

}  // namespace rav
