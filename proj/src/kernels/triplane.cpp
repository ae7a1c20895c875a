#include "rav/kernels/triplane.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rav/core/error.hpp"

namespace rav::kernels {
namespace {

// In-plane coordinate pairs (column axis, row axis) for the XY, XZ, YZ planes.
constexpr int kAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

struct Tap {
  std::int64_t offset[4];  // element offsets of the four corners (channel 0)
  double weight[4];
};

template <typename T>
Tap make_tap(const TriplaneShape& s, const T* point, int plane) {
  const std::int64_t r = s.resolution;
  const double scale = (r - 1) / (2.0 * s.half_extent);
  const double gc = std::clamp((static_cast<double>(point[kAxes[plane][0]]) + s.half_extent) * scale,
                               0.0, static_cast<double>(r - 1));
  const double gr = std::clamp((static_cast<double>(point[kAxes[plane][1]]) + s.half_extent) * scale,
                               0.0, static_cast<double>(r - 1));
  const std::int64_t c0 = std::min<std::int64_t>(static_cast<std::int64_t>(gc), r - 2);
  const std::int64_t r0 = std::min<std::int64_t>(static_cast<std::int64_t>(gr), r - 2);
  const double tc = gc - c0, tr = gr - r0;
  const std::int64_t base = plane * r * r * s.channels;
  Tap tap;
  tap.offset[0] = base + (r0 * r + c0) * s.channels;
  tap.offset[1] = base + (r0 * r + c0 + 1) * s.channels;
  tap.offset[2] = base + ((r0 + 1) * r + c0) * s.channels;
  tap.offset[3] = base + ((r0 + 1) * r + c0 + 1) * s.channels;
  tap.weight[0] = (1 - tc) * (1 - tr);
  tap.weight[1] = tc * (1 - tr);
  tap.weight[2] = (1 - tc) * tr;
  tap.weight[3] = tc * tr;
  return tap;
}

template <typename T>
void check(const TriplaneShape& s, const T* points) {
  require(s.resolution >= 2 && s.channels >= 1 && s.batch >= 0 && s.points >= 0,
          "tri-plane shape must have resolution >= 2 and channels >= 1");
  require(s.half_extent > 0.0, "tri-plane half extent must be positive");
  for (std::int64_t i = 0; i < s.batch * s.points * 3; ++i)
    require(std::isfinite(static_cast<double>(points[i])), "tri-plane query points must be finite");
}

template <typename T>
void sample_point(const TriplaneShape& s, const T* planes_b, const T* p, T* o) {
  std::fill(o, o + s.channels, T(0));
  for (int plane = 0; plane < 3; ++plane) {
    const Tap tap = make_tap(s, p, plane);
    for (int k = 0; k < 4; ++k) {
      const T w = static_cast<T>(tap.weight[k]);
      const T* src = planes_b + tap.offset[k];
      for (std::int64_t c = 0; c < s.channels; ++c) o[c] += w * src[c];
    }
  }
}

}  // namespace

template <typename T>
void triplane_sample(const TriplaneShape& s, const T* planes, const T* points, T* out) {
  check(s, points);
  const std::int64_t plane_size = 3 * s.resolution * s.resolution * s.channels;
  const std::int64_t total = s.batch * s.points;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < total; ++i) {
    const std::int64_t b = i / s.points;
    sample_point(s, planes + b * plane_size, points + i * 3, out + i * s.channels);
  }
}

template <typename T>
void triplane_sample_backward(const TriplaneShape& s, const T* grad_out, const T* points,
                              T* grad_planes) {
  check(s, points);
  const std::int64_t plane_size = 3 * s.resolution * s.resolution * s.channels;
  const std::int64_t grad_size = s.batch * plane_size;
  const std::int64_t total = s.batch * s.points;
  const int threads = omp_get_max_threads();
  std::fill(grad_planes, grad_planes + grad_size, T(0));
  if (threads == 1 || total < 4096) {
    reference::triplane_sample_backward(s, grad_out, points, grad_planes);
    return;
  }
  // Private scatter buffers, reduced in thread order so results do not depend on timing.
  std::vector<std::vector<T>> partial(threads);
#pragma omp parallel num_threads(threads)
  {
    const int tid = omp_get_thread_num();
    auto& acc = partial[tid];
    acc.assign(grad_size, T(0));
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) {
      const std::int64_t b = i / s.points;
      const T* g = grad_out + i * s.channels;
      T* dst_b = acc.data() + b * plane_size;
      for (int plane = 0; plane < 3; ++plane) {
        const Tap tap = make_tap(s, points + i * 3, plane);
        for (int k = 0; k < 4; ++k) {
          const T w = static_cast<T>(tap.weight[k]);
          T* dst = dst_b + tap.offset[k];
          for (std::int64_t c = 0; c < s.channels; ++c) dst[c] += w * g[c];
        }
      }
    }
  }
  for (int t = 0; t < threads; ++t) {
    const auto& acc = partial[t];
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < grad_size; ++j) grad_planes[j] += acc[j];
  }
}

namespace reference {

template <typename T>
void triplane_sample(const TriplaneShape& s, const T* planes, const T* points, T* out) {
  check(s, points);
  const std::int64_t plane_size = 3 * s.resolution * s.resolution * s.channels;
  for (std::int64_t b = 0; b < s.batch; ++b)
    for (std::int64_t n = 0; n < s.points; ++n) {
      const std::int64_t i = b * s.points + n;
      sample_point(s, planes + b * plane_size, points + i * 3, out + i * s.channels);
    }
}

template <typename T>
void triplane_sample_backward(const TriplaneShape& s, const T* grad_out, const T* points,
                              T* grad_planes) {
  check(s, points);
  const std::int64_t plane_size = 3 * s.resolution * s.resolution * s.channels;
  std::fill(grad_planes, grad_planes + s.batch * plane_size, T(0));
  for (std::int64_t i = 0; i < s.batch * s.points; ++i) {
    const std::int64_t b = i / s.points;
    const T* g = grad_out + i * s.channels;
    for (int plane = 0; plane < 3; ++plane) {
      const Tap tap = make_tap(s, points + i * 3, plane);
      for (int k = 0; k < 4; ++k) {
        T* dst = grad_planes + b * plane_size + tap.offset[k];
        for (std::int64_t c = 0; c < s.channels; ++c) dst[c] += static_cast<T>(tap.weight[k]) * g[c];
      }
    }
  }
}

template void triplane_sample<float>(const TriplaneShape&, const float*, const float*, float*);
template void triplane_sample<double>(const TriplaneShape&, const double*, const double*, double*);
template void triplane_sample_backward<float>(const TriplaneShape&, const float*, const float*, float*);
template void triplane_sample_backward<double>(const TriplaneShape&, const double*, const double*, double*);

}  // namespace reference

template void triplane_sample<float>(const TriplaneShape&, const float*, const float*, float*);
template void triplane_sample<double>(const TriplaneShape&, const double*, const double*, double*);
template void triplane_sample_backward<float>(const TriplaneShape&, const float*, const float*, float*);
template void triplane_sample_backward<double>(const TriplaneShape&, const double*, const double*, double*);

}  // namespace rav::kernels
