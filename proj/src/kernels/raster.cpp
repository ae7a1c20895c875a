#include "rav/kernels/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rav/core/error.hpp"

namespace rav::kernels {
namespace {

constexpr int kBandRows = 8;

struct Fragment {
  double depth;
  double weight[3];  // perspective-correct barycentrics
};

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Shared per-pixel coverage test so both implementations agree bit for bit.
bool shade(const ProjectedMesh& m, const Triangle& t, double px, double py, Fragment& f) {
  const double ax = m.u[t[0]], ay = m.v[t[0]];
  const double bx = m.u[t[1]], by = m.v[t[1]];
  const double cx = m.u[t[2]], cy = m.v[t[2]];
  const double area = edge(ax, ay, bx, by, cx, cy);
  if (area == 0.0) return false;
  const double w0 = edge(bx, by, cx, cy, px, py);
  const double w1 = edge(cx, cy, ax, ay, px, py);
  const double w2 = edge(ax, ay, bx, by, px, py);
  if (area > 0.0) {
    if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) return false;
  } else {
    if (w0 > 0.0 || w1 > 0.0 || w2 > 0.0) return false;
  }
  const double b0 = w0 / area, b1 = w1 / area, b2 = w2 / area;
  const double q0 = b0 / m.depth[t[0]], q1 = b1 / m.depth[t[1]], q2 = b2 / m.depth[t[2]];
  const double inv_z = q0 + q1 + q2;
  if (!(inv_z > 0.0)) return false;
  f.depth = 1.0 / inv_z;
  f.weight[0] = q0 / inv_z;
  f.weight[1] = q1 / inv_z;
  f.weight[2] = q2 / inv_z;
  return true;
}

void validate(const ProjectedMesh& m, const RasterSpec& s) {
  require(s.height > 0 && s.width > 0, "raster target must be non-empty");
  require(m.u.size() == m.v.size() && m.u.size() == m.depth.size(), "projected mesh arrays differ in length");
  require(m.attribute_dim > 0, "attribute_dim must be positive");
  require(m.attributes.size() == m.u.size() * m.attribute_dim, "attribute array has wrong length");
  require(s.background.size() == static_cast<std::size_t>(m.attribute_dim), "background has wrong length");
  for (const auto& t : m.triangles)
    for (auto i : t)
      require(i >= 0 && static_cast<std::size_t>(i) < m.u.size(), "triangle index out of range");
}

RasterResult blank(const ProjectedMesh& m, const RasterSpec& s) {
  RasterResult r;
  r.height = s.height;
  r.width = s.width;
  r.attribute_dim = m.attribute_dim;
  const std::size_t n = static_cast<std::size_t>(s.height) * s.width;
  r.attributes.resize(n * m.attribute_dim);
  for (std::size_t p = 0; p < n; ++p)
    std::copy(s.background.begin(), s.background.end(), r.attributes.begin() + p * m.attribute_dim);
  r.depth.assign(n, std::numeric_limits<double>::infinity());
  r.triangle_id.assign(n, -1);
  return r;
}

bool culled(const ProjectedMesh& m, const Triangle& t, double near_depth) {
  return m.depth[t[0]] <= near_depth || m.depth[t[1]] <= near_depth || m.depth[t[2]] <= near_depth;
}

struct PixelRange {
  int x0, x1, y0, y1;  // inclusive, possibly empty
};

PixelRange pixel_range(const ProjectedMesh& m, const Triangle& t, const RasterSpec& s) {
  double umin = m.u[t[0]], umax = umin, vmin = m.v[t[0]], vmax = vmin;
  for (int k = 1; k < 3; ++k) {
    umin = std::min(umin, m.u[t[k]]);
    umax = std::max(umax, m.u[t[k]]);
    vmin = std::min(vmin, m.v[t[k]]);
    vmax = std::max(vmax, m.v[t[k]]);
  }
  // pixel x has centre offset (x + 0.5 - cx)
  auto to_pixel = [](double value, int limit) {
    return static_cast<int>(std::clamp(value, -1.0, static_cast<double>(limit)));
  };
  PixelRange r;
  r.x0 = std::max(0, to_pixel(std::floor(umin + s.cx - 0.5), s.width));
  r.x1 = std::min(s.width - 1, to_pixel(std::ceil(umax + s.cx - 0.5), s.width));
  r.y0 = std::max(0, to_pixel(std::floor(vmin + s.cy - 0.5), s.height));
  r.y1 = std::min(s.height - 1, to_pixel(std::ceil(vmax + s.cy - 0.5), s.height));
  return r;
}

void write_fragment(const ProjectedMesh& m, const Triangle& t, const Fragment& f, int tri,
                    std::size_t pixel, RasterResult& r) {
  r.depth[pixel] = f.depth;
  r.triangle_id[pixel] = tri;
  const int d = m.attribute_dim;
  for (int c = 0; c < d; ++c) {
    r.attributes[pixel * d + c] = f.weight[0] * m.attributes[t[0] * d + c] +
                                  f.weight[1] * m.attributes[t[1] * d + c] +
                                  f.weight[2] * m.attributes[t[2] * d + c];
  }
}

}  // namespace

RasterResult rasterize(const ProjectedMesh& m, const RasterSpec& s) {
  validate(m, s);
  RasterResult r = blank(m, s);
  const int num_bands = (s.height + kBandRows - 1) / kBandRows;

  // Bin triangles by row band; each band then owns its pixels exclusively.
  std::vector<std::vector<std::int32_t>> bins(num_bands);
  std::vector<PixelRange> ranges(m.triangles.size());
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    if (culled(m, m.triangles[t], s.near_depth)) continue;
    ranges[t] = pixel_range(m, m.triangles[t], s);
    const auto& pr = ranges[t];
    if (pr.x0 > pr.x1 || pr.y0 > pr.y1) continue;
    for (int b = pr.y0 / kBandRows; b <= pr.y1 / kBandRows; ++b)
      bins[b].push_back(static_cast<std::int32_t>(t));
  }

#pragma omp parallel for schedule(dynamic, 1)
  for (int band = 0; band < num_bands; ++band) {
    const int row0 = band * kBandRows;
    const int row1 = std::min(s.height, row0 + kBandRows) - 1;
    Fragment f;
    for (const std::int32_t tri : bins[band]) {
      const Triangle& t = m.triangles[tri];
      const auto& pr = ranges[tri];
      const int y0 = std::max(row0, pr.y0), y1 = std::min(row1, pr.y1);
      for (int y = y0; y <= y1; ++y) {
        const double py = (y + 0.5) - s.cy;
        for (int x = pr.x0; x <= pr.x1; ++x) {
          const double px = (x + 0.5) - s.cx;
          if (!shade(m, t, px, py, f)) continue;
          const std::size_t pixel = static_cast<std::size_t>(y) * s.width + x;
          if (f.depth < r.depth[pixel]) write_fragment(m, t, f, tri, pixel, r);
        }
      }
    }
  }
  return r;
}

namespace reference {

RasterResult rasterize(const ProjectedMesh& m, const RasterSpec& s) {
  validate(m, s);
  RasterResult r = blank(m, s);
  Fragment f;
  for (std::size_t tri = 0; tri < m.triangles.size(); ++tri) {
    const Triangle& t = m.triangles[tri];
    if (culled(m, t, s.near_depth)) continue;
    const auto pr = pixel_range(m, t, s);
    for (int y = pr.y0; y <= pr.y1; ++y) {
      const double py = (y + 0.5) - s.cy;
      for (int x = pr.x0; x <= pr.x1; ++x) {
        const double px = (x + 0.5) - s.cx;
        if (!shade(m, t, px, py, f)) continue;
        const std::size_t pixel = static_cast<std::size_t>(y) * s.width + x;
        if (f.depth < r.depth[pixel]) write_fragment(m, t, f, static_cast<int>(tri), pixel, r);
      }
    }
  }
  return r;
}

}  // namespace reference
}  // namespace rav::kernels
