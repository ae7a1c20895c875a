#pragma once

#include <span>
#include <vector>

#include "rav/core/image.hpp"
#include "rav/morphable/model.hpp"

namespace rav::morphable {

/// Orbit camera looking at the origin. Yaw rotates the camera towards +x,
/// pitch raises it towards +y. Intrinsics are in pixels for a given image size.
struct CameraPose {
  double yaw_deg = 0.0;
  double pitch_deg = 0.0;
  double distance = 4.0;
  double focal_px = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  /// Pose whose unit-sphere silhouette spans `fill` of a square image.
  static CameraPose make(double yaw_deg, double pitch_deg, int resolution, double distance = 4.0,
                         double fill = 0.92);
  /// Same extrinsics, intrinsics rescaled by `factor` (for a resized image).
  CameraPose scaled(double factor) const;
  void validate() const;
};

enum class Projection { perspective, orthographic };

struct CameraFrame {
  std::array<double, 3> position, right, up, forward;
};
CameraFrame camera_frame(const CameraPose& pose);

struct ImagePoint {
  double x = 0.0;  // pixel coordinates (pixel centres at i + 0.5)
  double y = 0.0;
  double depth = 0.0;
};
ImagePoint project(const CameraPose& pose, std::span<const double, 3> point,
                   Projection projection = Projection::perspective);

/// Ray through the centre of pixel (x, y): origin and unit direction.
void pixel_ray(const CameraPose& pose, int x, int y, std::array<double, 3>& origin,
               std::array<double, 3>& direction);

struct RenderOptions {
  double background = 1.0;
  Projection projection = Projection::perspective;
  std::span<const double> colors;  // optional per-vertex override, V x 3
};

struct MeshRender {
  ImageBuffer image;
  std::vector<std::int32_t> triangle_id;  // -1 where background
  std::vector<double> depth;
};

/// Projects vertices and rasterises `dim` per-vertex attributes (background 0).
kernels::RasterResult rasterize_attributes(const MorphableModel& model, std::span<const double> vertices,
                                           const CameraPose& pose, int resolution, std::span<const double> attributes,
                                           int dim, Projection projection = Projection::perspective);

/// Rasterises arbitrary vertex positions with the model's topology.
MeshRender render_vertices(const MorphableModel& model, std::span<const double> vertices,
                           const CameraPose& pose, int resolution, const RenderOptions& options = {});

/// Flat-shaded render of the model at the given coefficients; resolution in [32, 512].
ImageBuffer render_3dmm(const MorphableModel& model, const CoefficientPair& coeffs,
                        const CameraPose& pose, int resolution, const RenderOptions& options = {});

/// 1 where a triangle of `region` is the visible surface, 0 elsewhere (1 channel).
ImageBuffer region_mask(const MorphableModel& model, const CoefficientPair& coeffs, const CameraPose& pose,
                        int resolution, Region region, const RenderOptions& options = {});

/// 1 wherever any triangle is visible.
ImageBuffer footprint_mask(const MorphableModel& model, const CoefficientPair& coeffs,
                           const CameraPose& pose, int resolution, const RenderOptions& options = {});

}  // namespace rav::morphable
