#pragma once

#include <array>

#include "rav/core/image.hpp"
#include "rav/landmarks/landmarks.hpp"

namespace rav::align {

/// Dark-blob gaze estimator. The search box spans the two eye corners
/// horizontally and +-box_height_fraction eye half-widths vertically; pixel
/// weights are max(0, dark_threshold - luma). The centroid offset from the
/// corner midpoint, in eye half-widths, maps linearly to degrees.
struct GazeConfig {
  double degrees_at_full_offset = 30.0;
  double dark_threshold = 0.3;
  double box_height_fraction = 1.0;
  double min_weight = 1e-3;  // below this total weight the iris is not detectable
};

struct Gaze {
  double yaw_deg = 0.0;    // +x in the image
  double pitch_deg = 0.0;  // up in the image
};

struct EyeCorners {
  landmarks::Point2 a;
  landmarks::Point2 b;
};

/// Throws not_detectable when no dark blob is found.
landmarks::Point2 iris_centroid(const ImageBuffer& img, const EyeCorners& corners, const GazeConfig& cfg = {});
Gaze estimate_gaze(const ImageBuffer& img, const EyeCorners& corners, const GazeConfig& cfg = {});

/// Unit gaze vector (x right, y up, z towards the camera).
std::array<double, 3> gaze_vector(const Gaze& g);
/// Angle in degrees between two gaze directions.
double angle_between(const Gaze& a, const Gaze& b);

double gaze_error(const ImageBuffer& aligned, const ImageBuffer& truth, const EyeCorners& corners,
                  const GazeConfig& cfg = {});
double gaze_error(const ImageBuffer& aligned, const Gaze& truth, const EyeCorners& corners,
                  const GazeConfig& cfg = {});

/// Parametric eye: skin, a white almond sclera and a dark iris disc offset by
/// the gaze (half-width * angle / degrees_at_full_offset), 4x4 supersampled.
/// Grayscale, size x size; corners are returned through `corners`.
ImageBuffer render_eye(int size, const Gaze& gaze, EyeCorners* corners = nullptr, const GazeConfig& cfg = {});

/// Corners of the two eyes from a landmark set.
EyeCorners eye_corners(const landmarks::LandmarkSet& lm, landmarks::Eye eye);

}  // namespace rav::align
