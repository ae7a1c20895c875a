#pragma once

#include <vector>

#include "rav/core/image.hpp"

namespace rav::kernels {

/// Normalised 1-D Gaussian taps of radius ceil(3 sigma); {1} when sigma == 0.
std::vector<double> gaussian_taps(double sigma);

/// Separable Gaussian blur with edge-clamped borders.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

/// Inverse radial warp about the image centre: the output pixel at offset x
/// samples the source at x (1 + k1 r^2 + k2 r^4), with r normalised to 1 at the
/// half-diagonal. Bilinear sampling, edge-clamped.
ImageBuffer radial_distort(const ImageBuffer& img, double k1, double k2);

/// Multiplies each pixel by max(0, 1 - strength r^2), r as in radial_distort.
ImageBuffer vignette(const ImageBuffer& img, double strength);

/// Normalised radius of pixel (x, y): distance of its centre from the image
/// centre divided by the half-diagonal.
double normalized_radius(int x, int y, int height, int width);

namespace reference {
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);
ImageBuffer radial_distort(const ImageBuffer& img, double k1, double k2);
ImageBuffer vignette(const ImageBuffer& img, double strength);
}  // namespace reference

}  // namespace rav::kernels
