#include <algorithm>
#include <cmath>

#include "rav/core/error.hpp"
#include "rav/core/io.hpp"
#include "rav/harness/harness.hpp"

namespace rav::harness {
namespace {

void put(ImageBuffer& img, int x, int y, const std::array<double, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

void line(ImageBuffer& img, double x0, double y0, double x1, double y1, const std::array<double, 3>& c) {
  const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    put(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
  }
}

ImageBuffer canvas(int width, int height) {
  require(width > 2 * kPlotMargin && height > 2 * kPlotMargin, "plot canvas too small", ErrorCategory::invalid_config);
  ImageBuffer img(height, width, 3, 1.0);
  const std::array<double, 3> black{0.0, 0.0, 0.0};
  const int l = kPlotMargin, r = width - kPlotMargin, t = kPlotMargin, b = height - kPlotMargin;
  line(img, l, t, r, t, black);
  line(img, l, b, r, b, black);
  line(img, l, t, l, b, black);
  line(img, r, t, r, b, black);
  return img;
}

ImageBuffer as_rgb_cell(const ImageBuffer& img, int cell) {
  ImageBuffer rgb = img.channels() == 3 ? img : replicate_channels(img, 3);
  if (rgb.height() != cell || rgb.width() != cell) rgb = resize_bilinear(rgb, cell, cell);
  return rgb;
}

}  // namespace

std::array<double, 3> palette(std::size_t i) {
  static const std::array<std::array<double, 3>, 6> colours{{{0.12, 0.47, 0.71},
                                                              {0.84, 0.15, 0.16},
                                                              {0.17, 0.63, 0.17},
                                                              {1.00, 0.50, 0.05},
                                                              {0.58, 0.40, 0.74},
                                                              {0.55, 0.34, 0.29}}};
  return colours[i % colours.size()];
}

ImageBuffer plot_lines(const std::vector<Series>& series, int width, int height) {
  ImageBuffer img = canvas(width, height);
  double lo = INFINITY, hi = -INFINITY;
  std::size_t longest = 0;
  for (const auto& s : series) {
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    longest = std::max(longest, s.values.size());
  }
  if (longest == 0 || !std::isfinite(lo)) return img;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double l = kPlotMargin + 1, r = width - kPlotMargin - 1, t = kPlotMargin + 1, b = height - kPlotMargin - 1;
  auto px = [&](std::size_t i) { return longest > 1 ? l + (r - l) * i / double(longest - 1) : 0.5 * (l + r); };
  auto py = [&](double v) { return b - (b - t) * (v - lo) / (hi - lo); };
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& v = series[k].values;
    const auto c = palette(k);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) continue;
      if (i + 1 < v.size() && std::isfinite(v[i + 1]))
        line(img, px(i), py(v[i]), px(i + 1), py(v[i + 1]), c);
      else
        put(img, static_cast<int>(std::lround(px(i))), static_cast<int>(std::lround(py(v[i]))), c);
    }
  }
  return img;
}

ImageBuffer plot_bars(const std::vector<double>& values, int width, int height) {
  ImageBuffer img = canvas(width, height);
  if (values.empty()) return img;
  double lo = 0.0, hi = 0.0;
  for (double v : values)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double l = kPlotMargin + 1, r = width - kPlotMargin - 1, t = kPlotMargin + 1, b = height - kPlotMargin - 1;
  auto py = [&](double v) { return b - (b - t) * (v - lo) / (hi - lo); };
  const double slot = (r - l) / values.size();
  const int zero = static_cast<int>(std::lround(py(0.0)));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    const int x0 = static_cast<int>(std::ceil(l + slot * (i + 0.15)));
    const int x1 = static_cast<int>(std::floor(l + slot * (i + 0.85)));
    const int y = static_cast<int>(std::lround(py(values[i])));
    for (int x = x0; x <= std::max(x0, x1); ++x)
      for (int yy = std::min(y, zero); yy <= std::max(y, zero); ++yy) put(img, x, yy, palette(0));
  }
  return img;
}

ImageBuffer image_grid(const std::vector<std::vector<ImageBuffer>>& rows, int cell, int pad) {
  require(cell >= 1 && pad >= 0, "grid cell must be positive", ErrorCategory::invalid_config);
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const int h = static_cast<int>(rows.size()) * (cell + pad) + pad;
  const int w = static_cast<int>(cols) * (cell + pad) + pad;
  ImageBuffer out(std::max(h, 1), std::max(w, 1), 3, 1.0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      const auto tile = as_rgb_cell(rows[i][j], cell);
      const int y0 = pad + static_cast<int>(i) * (cell + pad), x0 = pad + static_cast<int>(j) * (cell + pad);
      for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x)
          for (int k = 0; k < 3; ++k) out.at(y0 + y, x0 + x, k) = tile.at(y, x, k);
    }
  return out;
}

std::vector<std::string> plot_history(const LossHistory& history, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> phases;
  for (const auto& row : history.rows())
    if (std::find(phases.begin(), phases.end(), row.phase) == phases.end()) phases.push_back(row.phase);
  std::vector<std::string> written;
  if (phases.empty()) {
    write_png(dir / "loss.png", plot_lines({}));
    written.push_back("loss.png");
    return written;
  }
  for (const auto& phase : phases) {
    std::vector<std::string> terms;
    for (const auto& row : history.rows())
      if (row.phase == phase)
        for (const auto& [term, value] : row.terms)
          if (std::find(terms.begin(), terms.end(), term) == terms.end()) terms.push_back(term);
    std::vector<Series> series;
    for (const auto& term : terms) series.push_back({term, history.series(phase, term)});
    const std::string name = "loss_" + phase + ".png";
    write_png(dir / name, plot_lines(series));
    written.push_back(name);
  }
  return written;
}

}  // namespace rav::harness
