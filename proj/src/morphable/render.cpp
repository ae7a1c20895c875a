#include "rav/morphable/render.hpp"

#include <cmath>
#include <numbers>

#include "rav/core/error.hpp"

namespace rav::morphable {
namespace {

using Vec3 = std::array<double, 3>;

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Frame for a non-negative yaw. Negative yaws are handled by mirroring x so
// that poses +y and -y give exactly mirrored projections.
CameraFrame frame_for(double yaw_deg, double pitch_deg, double distance) {
  const double yaw = yaw_deg * std::numbers::pi / 180.0;
  const double pitch = pitch_deg * std::numbers::pi / 180.0;
  CameraFrame f;
  f.position = {distance * std::cos(pitch) * std::sin(yaw), distance * std::sin(pitch),
                distance * std::cos(pitch) * std::cos(yaw)};
  f.forward = normalized({-f.position[0], -f.position[1], -f.position[2]});
  f.right = normalized(cross(f.forward, {0.0, 1.0, 0.0}));
  f.up = cross(f.right, f.forward);
  return f;
}

}  // namespace

CameraPose CameraPose::make(double yaw_deg, double pitch_deg, int resolution, double distance, double fill) {
  CameraPose p;
  p.yaw_deg = yaw_deg;
  p.pitch_deg = pitch_deg;
  p.distance = distance;
  p.focal_px = distance > 1.0 ? fill * (resolution / 2.0) * std::sqrt(distance * distance - 1.0) : 0.0;
  p.cx = resolution / 2.0;
  p.cy = resolution / 2.0;
  p.validate();
  return p;
}

CameraPose CameraPose::scaled(double factor) const {
  CameraPose p = *this;
  p.focal_px *= factor;
  p.cx *= factor;
  p.cy *= factor;
  return p;
}

void CameraPose::validate() const {
  require(std::isfinite(distance) && distance > 1.0, "camera distance must exceed 1 (outside the head sphere)");
  require(std::isfinite(pitch_deg) && std::abs(pitch_deg) < 90.0, "camera pitch must satisfy |pitch| < 90");
  require(std::isfinite(yaw_deg), "camera yaw must be finite");
  require(std::isfinite(focal_px) && focal_px > 0.0, "focal length must be positive");
}

CameraFrame camera_frame(const CameraPose& pose) {
  return frame_for(pose.yaw_deg, pose.pitch_deg, pose.distance);
}

ImagePoint project(const CameraPose& pose, std::span<const double, 3> point, Projection projection) {
  const bool mirror = pose.yaw_deg < 0.0;
  const CameraFrame f = frame_for(std::abs(pose.yaw_deg), pose.pitch_deg, pose.distance);
  const Vec3 p{mirror ? -point[0] : point[0], point[1], point[2]};
  const Vec3 rel{p[0] - f.position[0], p[1] - f.position[1], p[2] - f.position[2]};
  const double depth = dot(rel, f.forward);
  const double scale = projection == Projection::perspective ? pose.focal_px / depth : pose.focal_px / pose.distance;
  double u = scale * dot(rel, f.right);
  const double v = -scale * dot(rel, f.up);
  if (mirror) u = -u;
  return {pose.cx + u, pose.cy + v, depth};
}

void pixel_ray(const CameraPose& pose, int x, int y, std::array<double, 3>& origin, std::array<double, 3>& direction) {
  const bool mirror = pose.yaw_deg < 0.0;
  const CameraFrame f = frame_for(std::abs(pose.yaw_deg), pose.pitch_deg, pose.distance);
  double u = (x + 0.5 - pose.cx) / pose.focal_px;
  const double v = (y + 0.5 - pose.cy) / pose.focal_px;
  if (mirror) u = -u;
  Vec3 d;
  for (int k = 0; k < 3; ++k) d[k] = f.forward[k] + u * f.right[k] - v * f.up[k];
  d = normalized(d);
  origin = f.position;
  direction = d;
  if (mirror) {
    origin[0] = -origin[0];
    direction[0] = -direction[0];
  }
}

kernels::RasterResult rasterize_attributes(const MorphableModel& model, std::span<const double> vertices,
                                           const CameraPose& pose, int resolution, std::span<const double> attributes,
                                           int dim, Projection projection) {
  pose.validate();
  require(resolution >= 1, "resolution must be positive");
  const std::size_t nv = static_cast<std::size_t>(model.num_vertices);
  require(vertices.size() == nv * 3, "vertex array must be V x 3");

  const bool mirror = pose.yaw_deg < 0.0;
  const CameraFrame f = frame_for(std::abs(pose.yaw_deg), pose.pitch_deg, pose.distance);
  std::vector<double> u(nv), v(nv), depth(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    const Vec3 p{mirror ? -vertices[i * 3] : vertices[i * 3], vertices[i * 3 + 1], vertices[i * 3 + 2]};
    const Vec3 rel{p[0] - f.position[0], p[1] - f.position[1], p[2] - f.position[2]};
    depth[i] = dot(rel, f.forward);
    const double scale =
        projection == Projection::perspective ? pose.focal_px / depth[i] : pose.focal_px / pose.distance;
    u[i] = scale * dot(rel, f.right);
    v[i] = -scale * dot(rel, f.up);
    if (mirror) u[i] = -u[i];
  }

  kernels::ProjectedMesh mesh{u, v, depth, model.triangles, attributes, dim};
  kernels::RasterSpec spec;
  spec.height = resolution;
  spec.width = resolution;
  spec.cx = pose.cx;
  spec.cy = pose.cy;
  spec.background.assign(dim, 0.0);
  return kernels::rasterize(mesh, spec);
}

MeshRender render_vertices(const MorphableModel& model, std::span<const double> vertices, const CameraPose& pose,
                           int resolution, const RenderOptions& options) {
  const std::span<const double> colors = options.colors.empty() ? std::span<const double>(model.vertex_colors)
                                                                : options.colors;
  require(colors.size() == static_cast<std::size_t>(model.num_vertices) * 3, "colour override must be V x 3");
  kernels::RasterResult r = rasterize_attributes(model, vertices, pose, resolution, colors, 3, options.projection);

  MeshRender out;
  out.image = ImageBuffer(resolution, resolution, 3);
  auto img = out.image.data();
  for (std::size_t p = 0; p < r.triangle_id.size(); ++p)
    for (int c = 0; c < 3; ++c) img[p * 3 + c] = r.triangle_id[p] >= 0 ? r.attributes[p * 3 + c] : options.background;
  out.triangle_id = std::move(r.triangle_id);
  out.depth = std::move(r.depth);
  return out;
}

ImageBuffer render_3dmm(const MorphableModel& model, const CoefficientPair& coeffs, const CameraPose& pose,
                        int resolution, const RenderOptions& options) {
  require(resolution >= 32 && resolution <= 512, "render resolution must lie in [32, 512]");
  const auto verts = evaluate(model, coeffs);
  return render_vertices(model, verts, pose, resolution, options).image;
}

ImageBuffer region_mask(const MorphableModel& model, const CoefficientPair& coeffs, const CameraPose& pose,
                        int resolution, Region region, const RenderOptions& options) {
  require(static_cast<int>(region) < kNumRegions, "unknown region label");
  const auto verts = evaluate(model, coeffs);
  const auto render = render_vertices(model, verts, pose, resolution, options);
  const auto labels = triangle_regions(model);
  ImageBuffer mask(resolution, resolution, 1);
  auto data = mask.data();
  for (std::size_t p = 0; p < render.triangle_id.size(); ++p) {
    const auto t = render.triangle_id[p];
    data[p] = (t >= 0 && labels[t] == region) ? 1.0 : 0.0;
  }
  return mask;
}

ImageBuffer footprint_mask(const MorphableModel& model, const CoefficientPair& coeffs, const CameraPose& pose,
                           int resolution, const RenderOptions& options) {
  const auto verts = evaluate(model, coeffs);
  const auto render = render_vertices(model, verts, pose, resolution, options);
  ImageBuffer mask(resolution, resolution, 1);
  auto data = mask.data();
  for (std::size_t p = 0; p < render.triangle_id.size(); ++p) data[p] = render.triangle_id[p] >= 0 ? 1.0 : 0.0;
  return mask;
}

}  // namespace rav::morphable
