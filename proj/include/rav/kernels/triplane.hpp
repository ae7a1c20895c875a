#pragma once

#include <cstdint>

namespace rav::kernels {

/// Geometry of a batch of tri-planes stored as [batch, 3, R, R, C] (channels
/// last). Plane 0 is indexed by (x, y), plane 1 by (x, z), plane 2 by (y, z);
/// the first in-plane coordinate selects the column, the second the row. Grid
/// nodes span the cube [-half_extent, half_extent] with corner-aligned nodes.
struct TriplaneShape {
  std::int64_t batch = 0;
  std::int64_t resolution = 0;
  std::int64_t channels = 0;
  std::int64_t points = 0;  // query points per batch element
  double half_extent = 1.0;
};

/// out[b, n, :] = sum over planes of the bilinearly interpolated plane features
/// at the projection of points[b, n, :]. Coordinates outside the cube clamp to
/// the edge.
template <typename T>
void triplane_sample(const TriplaneShape& shape, const T* planes, const T* points, T* out);

/// Accumulates d(loss)/d(planes) given d(loss)/d(out). `grad_planes` is
/// overwritten. Deterministic for a fixed thread count.
template <typename T>
void triplane_sample_backward(const TriplaneShape& shape, const T* grad_out, const T* points,
                              T* grad_planes);

namespace reference {
template <typename T>
void triplane_sample(const TriplaneShape& shape, const T* planes, const T* points, T* out);
template <typename T>
void triplane_sample_backward(const TriplaneShape& shape, const T* grad_out, const T* points,
                              T* grad_planes);
}  // namespace reference

}  // namespace rav::kernels
