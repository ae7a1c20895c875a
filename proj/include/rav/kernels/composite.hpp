#pragma once

#include <cstdint>

namespace rav::kernels {

/// Emission-absorption compositing along rays.
///
/// Inputs per ray r and sample i: density sigma[r, i] >= 0, colour rgb[r, i, 3],
/// segment length delta[r, i]. With tau_i = sigma_i delta_i,
/// T_i = exp(-sum_{j<i} tau_j) and w_i = T_i (1 - exp(-tau_i)), the pixel is
/// sum_i w_i c_i + (1 - sum_i w_i) background.
struct CompositeShape {
  std::int64_t rays = 0;
  std::int64_t samples = 0;
};

/// `transmittance` receives the residual transmittance 1 - sum_i w_i per ray
/// and may be null.
template <typename T>
void composite(const CompositeShape& shape, const T* sigma, const T* rgb, const T* delta,
               const T* background, T* out_rgb, T* transmittance);

/// Gradients with respect to sigma and rgb given d(loss)/d(out_rgb).
template <typename T>
void composite_backward(const CompositeShape& shape, const T* sigma, const T* rgb, const T* delta,
                        const T* background, const T* grad_out, T* grad_sigma, T* grad_rgb);

namespace reference {
template <typename T>
void composite(const CompositeShape& shape, const T* sigma, const T* rgb, const T* delta,
               const T* background, T* out_rgb, T* transmittance);
template <typename T>
void composite_backward(const CompositeShape& shape, const T* sigma, const T* rgb, const T* delta,
                        const T* background, const T* grad_out, T* grad_sigma, T* grad_rgb);
}  // namespace reference

}  // namespace rav::kernels
