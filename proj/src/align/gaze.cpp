#include "rav/align/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rav/core/error.hpp"

namespace rav::align {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double luma(const ImageBuffer& img, int y, int x) {
  if (img.channels() == 1) return img.at(y, x, 0);
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

}  // namespace

landmarks::Point2 iris_centroid(const ImageBuffer& img, const EyeCorners& c, const GazeConfig& cfg) {
  const double half = 0.5 * std::hypot(c.b.x - c.a.x, c.b.y - c.a.y);
  require(half > 0.0, "eye corners coincide");
  const double my = 0.5 * (c.a.y + c.b.y);
  const double x0 = std::min(c.a.x, c.b.x), x1 = std::max(c.a.x, c.b.x);
  const double y0 = my - cfg.box_height_fraction * half, y1 = my + cfg.box_height_fraction * half;
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (int y = std::max(0, static_cast<int>(std::floor(y0))); y < std::min(img.height(), static_cast<int>(std::ceil(y1))); ++y)
    for (int x = std::max(0, static_cast<int>(std::floor(x0))); x < std::min(img.width(), static_cast<int>(std::ceil(x1))); ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (px < x0 || px > x1 || py < y0 || py > y1) continue;
      const double w = std::max(0.0, cfg.dark_threshold - luma(img, y, x));
      sw += w;
      sx += w * px;
      sy += w * py;
    }
  if (sw < cfg.min_weight) throw Error(ErrorCategory::not_detectable, "no iris blob inside the eye box");
  return {sx / sw, sy / sw};
}

Gaze estimate_gaze(const ImageBuffer& img, const EyeCorners& c, const GazeConfig& cfg) {
  const auto p = iris_centroid(img, c, cfg);
  const double half = 0.5 * std::hypot(c.b.x - c.a.x, c.b.y - c.a.y);
  const double mx = 0.5 * (c.a.x + c.b.x), my = 0.5 * (c.a.y + c.b.y);
  return {(p.x - mx) / half * cfg.degrees_at_full_offset, -(p.y - my) / half * cfg.degrees_at_full_offset};
}

std::array<double, 3> gaze_vector(const Gaze& g) {
  const double yaw = g.yaw_deg * kDeg, pitch = g.pitch_deg * kDeg;
  return {std::sin(yaw) * std::cos(pitch), std::sin(pitch), std::cos(yaw) * std::cos(pitch)};
}

double angle_between(const Gaze& a, const Gaze& b) {
  const auto u = gaze_vector(a), v = gaze_vector(b);
  // atan2 of cross and dot norms is accurate near zero, unlike acos.
  const double cx = u[1] * v[2] - u[2] * v[1], cy = u[2] * v[0] - u[0] * v[2], cz = u[0] * v[1] - u[1] * v[0];
  const double dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  return std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot) / kDeg;
}

double gaze_error(const ImageBuffer& aligned, const ImageBuffer& truth, const EyeCorners& corners,
                  const GazeConfig& cfg) {
  return angle_between(estimate_gaze(aligned, corners, cfg), estimate_gaze(truth, corners, cfg));
}

double gaze_error(const ImageBuffer& aligned, const Gaze& truth, const EyeCorners& corners, const GazeConfig& cfg) {
  return angle_between(estimate_gaze(aligned, corners, cfg), truth);
}

ImageBuffer render_eye(int size, const Gaze& gaze, EyeCorners* corners, const GazeConfig& cfg) {
  require(size >= 8, "eye image must be at least 8 pixels");
  const double c = 0.5 * size;
  const double half = 0.35 * size;
  const double ix = c + gaze.yaw_deg / cfg.degrees_at_full_offset * half;
  const double iy = c - gaze.pitch_deg / cfg.degrees_at_full_offset * half;
  const double r = 0.42 * half;
  constexpr int kSub = 4;
  ImageBuffer img(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x + (sx + 0.5) / kSub, py = y + (sy + 0.5) / kSub;
          const double ex = (px - c) / half, ey = (py - c) / (0.5 * half);
          double v = 0.72;  // skin
          if (ex * ex + ey * ey <= 1.0) v = 0.95;
          if (std::hypot(px - ix, py - iy) <= r) v = 0.12;
          acc += v;
        }
      img.at(y, x, 0) = acc / (kSub * kSub);
    }
  if (corners != nullptr) *corners = {{c - half, c}, {c + half, c}};
  return img;
}

EyeCorners eye_corners(const landmarks::LandmarkSet& lm, landmarks::Eye eye) {
  if (eye == landmarks::Eye::left) return {lm.at("left_eye_outer"), lm.at("left_eye_inner")};
  return {lm.at("right_eye_inner"), lm.at("right_eye_outer")};
}

}  // namespace rav::align
