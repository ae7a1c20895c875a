#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace rav::kernels {

using Triangle = std::array<std::int32_t, 3>;

/// Vertices already projected to the image plane.
///
/// `u`, `v` are pixel offsets from the principal point (u right, v down); `depth`
/// is camera-space depth along the viewing axis. Working relative to the
/// principal point keeps horizontally mirrored inputs bit-exactly mirrored.
struct ProjectedMesh {
  std::span<const double> u;
  std::span<const double> v;
  std::span<const double> depth;
  std::span<const Triangle> triangles;
  std::span<const double> attributes;  // per-vertex, attribute_dim values each
  int attribute_dim = 0;
};

struct RasterSpec {
  int height = 0;
  int width = 0;
  double cx = 0.0;  // principal point, pixels
  double cy = 0.0;
  double near_depth = 1e-3;
  std::vector<double> background;  // attribute_dim values
};

struct RasterResult {
  int height = 0;
  int width = 0;
  int attribute_dim = 0;
  std::vector<double> attributes;          // H*W*attribute_dim
  std::vector<double> depth;               // H*W, +inf where empty
  std::vector<std::int32_t> triangle_id;   // H*W, -1 where empty
};

/// Z-buffered rasterisation with perspective-correct attribute interpolation.
///
/// Coverage is inclusive of edges (pixel centres on an edge count). The nearest
/// depth wins; exact depth ties go to the lower triangle index.
RasterResult rasterize(const ProjectedMesh& mesh, const RasterSpec& spec);

namespace reference {
RasterResult rasterize(const ProjectedMesh& mesh, const RasterSpec& spec);
}

}  // namespace rav::kernels
