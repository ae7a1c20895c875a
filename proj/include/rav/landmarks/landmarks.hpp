#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>

#include "rav/core/image.hpp"

namespace rav::landmarks {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

enum class LandmarkSource { oracle, detector };

inline constexpr std::array<const char*, 10> kLandmarkNames{
    "left_eye_outer", "left_eye_inner", "right_eye_inner", "right_eye_outer", "left_iris",
    "right_iris",     "nose_tip",       "mouth_left",      "mouth_right",     "chin"};

/// Named 2-D points in full-face pixel coordinates (pixel centres at i + 0.5).
/// "Left" is the subject's left eye, which appears on the image left.
struct LandmarkSet {
  std::map<std::string, Point2> points;
  LandmarkSource source = LandmarkSource::oracle;

  const Point2& at(const std::string& name) const;
  Point2 left_eye_center() const;   // midpoint of the left eye corners
  Point2 right_eye_center() const;
  /// All names present, finite, inside a height x width image, and
  /// left_eye_outer.x < right_eye_outer.x. Throws contract_violation.
  void validate(int height, int width) const;
};

/// Any detector satisfying the LandmarkSet contract.
class LandmarkDetector {
 public:
  virtual ~LandmarkDetector() = default;
  virtual LandmarkSet detect(const ImageBuffer& image) const = 0;
};

/// Oracle landmarks when available, otherwise the detector's output (validated).
/// Throws not_detectable when neither is available.
LandmarkSet get_landmarks(const ImageBuffer& image, const std::optional<LandmarkSet>& oracle,
                          const LandmarkDetector* detector = nullptr);

/// Crop geometry shared by data simulation and compositing. Windows scale with
/// the face width measured from landmarks (a fixed multiple of the outer
/// eye-corner span); stored crops have fixed sizes relative to the image width.
struct CropGeometry {
  double eye_fraction = 0.25;            // square eye window side / face width
  double lower_width_fraction = 0.5;     // lower-face window width / face width
  double lower_height_fraction = 0.375;  // stored lower-face crop height / image width
  double face_width_per_corner_span = 2.0;

  double face_width(const LandmarkSet& lm) const;
  int eye_crop_size(int image_width) const;
  int lower_crop_height(int image_width) const;
  int lower_crop_width(int image_width) const;
};

enum class Eye { left, right };

/// Square window centred on the eye-corner midpoint. Not bounds-checked.
PixelWindow eye_window_unchecked(const LandmarkSet& lm, Eye eye, const CropGeometry& geo = {});
/// Window spanning nose tip to chin vertically, centred on the nose tip
/// horizontally. Not bounds-checked.
PixelWindow lower_window_unchecked(const LandmarkSet& lm, const CropGeometry& geo = {});

/// Bounds-checked variants; throw contract_violation when the window leaves the image.
PixelWindow eye_window(const LandmarkSet& lm, Eye eye, int height, int width, const CropGeometry& geo = {});
PixelWindow lower_window(const LandmarkSet& lm, int height, int width, const CropGeometry& geo = {});
/// Smallest window containing both eye windows.
PixelWindow eye_band_window(const LandmarkSet& lm, int height, int width, const CropGeometry& geo = {});

/// Translates `w` by the least amount that puts it inside the image (size kept).
PixelWindow shift_inside(PixelWindow w, int height, int width);

/// Blend weight of pixel (y, x) in an h x w window: the distance d from the
/// pixel centre to the nearest window edge gives clamp((d - 0.5) / feather, 0, 1),
/// and the row and column weights combine by minimum. feather = 0 gives 1.
double feather_weight(int y, int x, int h, int w, double feather_px);

/// Scales each crop to its window, replicates gray to 3 channels and alpha
/// blends it over `dp` with a feathered border. Pixels outside all windows are
/// copied from `dp` unchanged.
ImageBuffer paste_crops(const ImageBuffer& dp, const ImageBuffer& eye_left, const ImageBuffer& eye_right,
                        const ImageBuffer& lower, const LandmarkSet& lm, double feather_px = 4.0,
                        const CropGeometry& geo = {});

/// Content of eye_band_window.
ImageBuffer crop_eye_region(const ImageBuffer& image, const LandmarkSet& lm, const CropGeometry& geo = {});

}  // namespace rav::landmarks
