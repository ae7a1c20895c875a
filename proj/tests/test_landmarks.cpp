#include <cmath>

#include "doctest.h"
#include "rav/core/error.hpp"
#include "rav/landmarks/landmarks.hpp"

using namespace rav;
using namespace rav::landmarks;

namespace {

LandmarkSet face_landmarks() {
  LandmarkSet lm;
  lm.points = {{"left_eye_outer", {18.0, 26.0}}, {"left_eye_inner", {28.0, 26.0}}, {"right_eye_inner", {36.0, 26.0}},
               {"right_eye_outer", {46.0, 26.0}}, {"left_iris", {23.0, 26.0}},     {"right_iris", {41.0, 26.0}},
               {"nose_tip", {32.0, 34.0}},        {"mouth_left", {26.0, 44.0}},    {"mouth_right", {38.0, 44.0}},
               {"chin", {32.0, 54.0}}};
  return lm;
}

ImageBuffer colourful(int n) {
  ImageBuffer img(n, n, 3);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      img.at(y, x, 0) = (x % 7) / 7.0;
      img.at(y, x, 1) = (y % 5) / 5.0;
      img.at(y, x, 2) = ((x + y) % 3) / 3.0;
    }
  return img;
}

struct GridDetector : LandmarkDetector {
  double offset = 0.0;
  LandmarkSet detect(const ImageBuffer&) const override {
    LandmarkSet lm = face_landmarks();
    for (auto& [name, p] : lm.points) p.x += offset;
    return lm;
  }
};

}  // namespace

TEST_CASE("landmark provisioning") {
  const ImageBuffer img(64, 64, 3);
  const auto oracle = face_landmarks();
  SUBCASE("oracle passthrough") {
    const auto lm = get_landmarks(img, oracle);
    CHECK(lm.points.size() == oracle.points.size());
    CHECK(lm.at("chin").y == 54.0);
    CHECK(lm.source == LandmarkSource::oracle);
  }
  SUBCASE("missing detector is a declared error") {
    try {
      get_landmarks(img, std::nullopt);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::not_detectable);
    }
  }
  SUBCASE("detector output accepted only when in bounds") {
    GridDetector good;
    CHECK(get_landmarks(img, std::nullopt, &good).source == LandmarkSource::detector);
    GridDetector bad;
    bad.offset = 40.0;
    CHECK_THROWS_AS(get_landmarks(img, std::nullopt, &bad), Error);
  }
  SUBCASE("validation enforces left/right order") {
    auto lm = oracle;
    std::swap(lm.points["left_eye_outer"], lm.points["right_eye_outer"]);
    CHECK_THROWS_AS(lm.validate(64, 64), Error);
  }
}

TEST_CASE("feather weights match the closed form") {
  const int h = 12, w = 16;
  const double f = 4.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double wx = std::clamp((std::min(x + 0.5, w - x - 0.5) - 0.5) / f, 0.0, 1.0);
      const double wy = std::clamp((std::min(y + 0.5, h - y - 0.5) - 0.5) / f, 0.0, 1.0);
      const double expect = std::min(wx, wy);
      const double got = feather_weight(y, x, h, w, f);
      CHECK(got == doctest::Approx(expect).epsilon(1e-15));
      CHECK(got >= 0.0);
      CHECK(got <= 1.0);
      CHECK(got == feather_weight(h - 1 - y, w - 1 - x, h, w, f));  // symmetric about the centre
    }
  CHECK(feather_weight(0, 5, h, w, f) == 0.0);
  CHECK(feather_weight(6, 8, h, w, f) == 1.0);
  CHECK(feather_weight(0, 0, h, w, 0.0) == 1.0);
}

TEST_CASE("paste with zero feather only converts windows to grayscale") {
  const ImageBuffer dp = colourful(64);
  const auto lm = face_landmarks();
  const auto wl = eye_window(lm, Eye::left, 64, 64), wr = eye_window(lm, Eye::right, 64, 64);
  const auto wlow = lower_window(lm, 64, 64);
  const ImageBuffer gray = to_grayscale(dp);
  const auto out = paste_crops(dp, crop(gray, wl), crop(gray, wr), crop(gray, wlow), lm, 0.0);
  auto inside = [](const PixelWindow& w, int y, int x) {
    return x >= w.x0 && x < w.x0 + w.width && y >= w.y0 && y < w.y0 + w.height;
  };
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) {
        if (inside(wl, y, x) || inside(wr, y, x) || inside(wlow, y, x))
          CHECK(out.at(y, x, c) == doctest::Approx(gray.at(y, x, 0)).epsilon(1e-12));
        else
          CHECK(out.at(y, x, c) == dp.at(y, x, c));
      }
}

TEST_CASE("feathered paste is local and blends linearly") {
  const ImageBuffer dp = colourful(64);
  const auto lm = face_landmarks();
  const int es = CropGeometry{}.eye_crop_size(64);
  const ImageBuffer white(es, es, 1, 1.0);
  const auto wlow = lower_window(lm, 64, 64);
  const ImageBuffer black(wlow.height, wlow.width, 1, 0.0);
  const auto out = paste_crops(dp, white, white, black, lm, 4.0);
  const auto wl = eye_window(lm, Eye::left, 64, 64);
  for (int y = 0; y < wl.height; ++y)
    for (int x = 0; x < wl.width; ++x) {
      const double a = feather_weight(y, x, wl.height, wl.width, 4.0);
      CHECK(out.at(wl.y0 + y, wl.x0 + x, 1) ==
            doctest::Approx(a + (1 - a) * dp.at(wl.y0 + y, wl.x0 + x, 1)).epsilon(1e-12));
    }
  CHECK(out.at(0, 0, 0) == dp.at(0, 0, 0));
  CHECK(out.at(63, 63, 2) == dp.at(63, 63, 2));
}

TEST_CASE("windows outside the image are rejected") {
  auto lm = face_landmarks();
  lm.points["left_eye_outer"] = {1.0, 26.0};
  lm.points["left_eye_inner"] = {3.0, 26.0};
  const ImageBuffer dp(64, 64, 3);
  const ImageBuffer e(16, 16, 1);
  CHECK_THROWS_AS(paste_crops(dp, e, e, e, lm, 0.0), Error);
  const auto shifted = shift_inside(eye_window_unchecked(lm, Eye::left), 64, 64);
  CHECK(shifted.inside(64, 64));
}

TEST_CASE("eye-band crop") {
  const ImageBuffer img = colourful(64);
  const auto lm = face_landmarks();
  const auto band = eye_band_window(lm, 64, 64);
  CHECK(band.inside(64, 64));
  const auto c = crop_eye_region(img, lm);
  CHECK(c.height() == band.height);
  CHECK(c.width() == band.width);
  for (int y = 0; y < band.height; ++y)
    for (int x = 0; x < band.width; ++x) CHECK(c.at(y, x, 0) == img.at(band.y0 + y, band.x0 + x, 0));
  // Cropping the crop with shifted landmarks returns the same pixels.
  LandmarkSet shifted = lm;
  for (auto& [name, p] : shifted.points) p = {p.x - band.x0, p.y - band.y0};
  CHECK(crop_eye_region(c, shifted) == c);
}
