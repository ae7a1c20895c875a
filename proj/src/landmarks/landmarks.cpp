#include "rav/landmarks/landmarks.hpp"

#include <algorithm>
#include <cmath>

#include "rav/core/error.hpp"

namespace rav::landmarks {
namespace {

Point2 midpoint(const Point2& a, const Point2& b) { return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}; }

PixelWindow centred_window(Point2 centre, int width, int height) {
  return {static_cast<int>(std::lround(centre.x - 0.5 * width)), static_cast<int>(std::lround(centre.y - 0.5 * height)),
          width, height};
}

void require_inside(const PixelWindow& w, int height, int width, const char* what) {
  require(w.inside(height, width), std::string(what) + " window lies outside the image");
}

void blend(ImageBuffer& out, const ImageBuffer& crop_img, const PixelWindow& w, double feather) {
  require(crop_img.channels() == 1 || crop_img.channels() == 3, "crops must have 1 or 3 channels");
  const ImageBuffer scaled = resize_bilinear(crop_img, w.height, w.width);
  for (int y = 0; y < w.height; ++y)
    for (int x = 0; x < w.width; ++x) {
      const double a = feather_weight(y, x, w.height, w.width, feather);
      for (int c = 0; c < 3; ++c) {
        const double src = scaled.at(y, x, scaled.channels() == 1 ? 0 : c);
        double& dst = out.at(w.y0 + y, w.x0 + x, c);
        dst = a == 1.0 ? src : a * src + (1.0 - a) * dst;
      }
    }
}

}  // namespace

const Point2& LandmarkSet::at(const std::string& name) const {
  auto it = points.find(name);
  if (it == points.end()) throw Error(ErrorCategory::contract_violation, "missing landmark '" + name + "'");
  return it->second;
}

Point2 LandmarkSet::left_eye_center() const { return midpoint(at("left_eye_outer"), at("left_eye_inner")); }
Point2 LandmarkSet::right_eye_center() const { return midpoint(at("right_eye_inner"), at("right_eye_outer")); }

void LandmarkSet::validate(int height, int width) const {
  for (const char* name : kLandmarkNames) {
    const Point2& p = at(name);
    require(std::isfinite(p.x) && std::isfinite(p.y), std::string("landmark '") + name + "' is not finite");
    require(p.x >= 0.0 && p.y >= 0.0 && p.x <= width && p.y <= height,
            std::string("landmark '") + name + "' lies outside the image");
  }
  require(at("left_eye_outer").x < at("right_eye_outer").x, "left eye must appear left of the right eye");
}

LandmarkSet get_landmarks(const ImageBuffer& image, const std::optional<LandmarkSet>& oracle,
                          const LandmarkDetector* detector) {
  if (oracle) return *oracle;
  if (detector == nullptr)
    throw Error(ErrorCategory::not_detectable, "no oracle landmarks and no landmark detector registered");
  LandmarkSet lm = detector->detect(image);
  lm.source = LandmarkSource::detector;
  lm.validate(image.height(), image.width());
  return lm;
}

double CropGeometry::face_width(const LandmarkSet& lm) const {
  const Point2& l = lm.at("left_eye_outer");
  const Point2& r = lm.at("right_eye_outer");
  return face_width_per_corner_span * std::hypot(r.x - l.x, r.y - l.y);
}
int CropGeometry::eye_crop_size(int image_width) const {
  return std::max(4, static_cast<int>(std::lround(eye_fraction * image_width)));
}
int CropGeometry::lower_crop_height(int image_width) const {
  return std::max(4, static_cast<int>(std::lround(lower_height_fraction * image_width)));
}
int CropGeometry::lower_crop_width(int image_width) const {
  return std::max(4, static_cast<int>(std::lround(lower_width_fraction * image_width)));
}

PixelWindow eye_window_unchecked(const LandmarkSet& lm, Eye eye, const CropGeometry& geo) {
  const int side = std::max(4, static_cast<int>(std::lround(geo.eye_fraction * geo.face_width(lm))));
  return centred_window(eye == Eye::left ? lm.left_eye_center() : lm.right_eye_center(), side, side);
}

PixelWindow lower_window_unchecked(const LandmarkSet& lm, const CropGeometry& geo) {
  const Point2& nose = lm.at("nose_tip");
  const Point2& chin = lm.at("chin");
  const int width = std::max(4, static_cast<int>(std::lround(geo.lower_width_fraction * geo.face_width(lm))));
  const int y0 = static_cast<int>(std::lround(nose.y));
  const int height = std::max(4, static_cast<int>(std::lround(chin.y)) - y0);
  return {static_cast<int>(std::lround(nose.x - 0.5 * width)), y0, width, height};
}

PixelWindow eye_window(const LandmarkSet& lm, Eye eye, int height, int width, const CropGeometry& geo) {
  const auto w = eye_window_unchecked(lm, eye, geo);
  require_inside(w, height, width, eye == Eye::left ? "left-eye" : "right-eye");
  return w;
}

PixelWindow lower_window(const LandmarkSet& lm, int height, int width, const CropGeometry& geo) {
  const auto w = lower_window_unchecked(lm, geo);
  require_inside(w, height, width, "lower-face");
  return w;
}

PixelWindow eye_band_window(const LandmarkSet& lm, int height, int width, const CropGeometry& geo) {
  const auto l = eye_window(lm, Eye::left, height, width, geo);
  const auto r = eye_window(lm, Eye::right, height, width, geo);
  const int x0 = std::min(l.x0, r.x0), y0 = std::min(l.y0, r.y0);
  const int x1 = std::max(l.x0 + l.width, r.x0 + r.width), y1 = std::max(l.y0 + l.height, r.y0 + r.height);
  return {x0, y0, x1 - x0, y1 - y0};
}

PixelWindow shift_inside(PixelWindow w, int height, int width) {
  require(w.width <= width && w.height <= height, "window larger than the image");
  w.x0 = std::clamp(w.x0, 0, width - w.width);
  w.y0 = std::clamp(w.y0, 0, height - w.height);
  return w;
}

double feather_weight(int y, int x, int h, int w, double feather_px) {
  if (feather_px <= 0.0) return 1.0;
  const double dx = std::min(x + 0.5, w - x - 0.5);
  const double dy = std::min(y + 0.5, h - y - 0.5);
  const double wx = std::clamp((dx - 0.5) / feather_px, 0.0, 1.0);
  const double wy = std::clamp((dy - 0.5) / feather_px, 0.0, 1.0);
  return std::min(wx, wy);
}

ImageBuffer paste_crops(const ImageBuffer& dp, const ImageBuffer& eye_left, const ImageBuffer& eye_right,
                        const ImageBuffer& lower, const LandmarkSet& lm, double feather_px, const CropGeometry& geo) {
  require(dp.channels() == 3, "DP image must be RGB");
  require(feather_px >= 0.0 && std::isfinite(feather_px), "feather width must be finite and non-negative");
  const int h = dp.height(), w = dp.width();
  const auto wl = eye_window(lm, Eye::left, h, w, geo);
  const auto wr = eye_window(lm, Eye::right, h, w, geo);
  const auto wlow = lower_window(lm, h, w, geo);
  ImageBuffer out = dp;
  blend(out, lower, wlow, feather_px);
  blend(out, eye_left, wl, feather_px);
  blend(out, eye_right, wr, feather_px);
  return out;
}

ImageBuffer crop_eye_region(const ImageBuffer& image, const LandmarkSet& lm, const CropGeometry& geo) {
  return crop(image, eye_band_window(lm, image.height(), image.width(), geo));
}

}  // namespace rav::landmarks
