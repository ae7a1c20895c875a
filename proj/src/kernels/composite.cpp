#include "rav/kernels/composite.hpp"

#include <cmath>
#include <vector>

namespace rav::kernels {

template <typename T>
void composite(const CompositeShape& s, const T* sigma, const T* rgb, const T* delta,
               const T* background, T* out_rgb, T* transmittance) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < s.rays; ++r) {
    const T* sg = sigma + r * s.samples;
    const T* dl = delta + r * s.samples;
    const T* c = rgb + r * s.samples * 3;
    T acc[3] = {0, 0, 0};
    T weight_sum = 0;
    T optical_depth = 0;
    for (std::int64_t i = 0; i < s.samples; ++i) {
      const T tau = sg[i] * dl[i];
      const T w = std::exp(-optical_depth) * (T(1) - std::exp(-tau));
      optical_depth += tau;
      weight_sum += w;
      for (int k = 0; k < 3; ++k) acc[k] += w * c[i * 3 + k];
    }
    const T residual = T(1) - weight_sum;
    for (int k = 0; k < 3; ++k) out_rgb[r * 3 + k] = acc[k] + residual * background[k];
    if (transmittance != nullptr) transmittance[r] = residual;
  }
}

template <typename T>
void composite_backward(const CompositeShape& s, const T* sigma, const T* rgb, const T* delta,
                        const T* background, const T* grad_out, T* grad_sigma, T* grad_rgb) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < s.rays; ++r) {
    const T* sg = sigma + r * s.samples;
    const T* dl = delta + r * s.samples;
    const T* c = rgb + r * s.samples * 3;
    const T* g = grad_out + r * 3;
    T* gs = grad_sigma + r * s.samples;
    T* gc = grad_rgb + r * s.samples * 3;

    // Forward sweep: transmittance after each sample and weights.
    std::vector<T> t_after(s.samples), w(s.samples);
    T optical_depth = 0, weight_sum = 0;
    for (std::int64_t i = 0; i < s.samples; ++i) {
      const T tau = sg[i] * dl[i];
      w[i] = std::exp(-optical_depth) * (T(1) - std::exp(-tau));
      optical_depth += tau;
      t_after[i] = std::exp(-optical_depth);
      weight_sum += w[i];
    }
    // Backward sweep with the running tail sum_{i>k} w_i c_i + T_end bg, dotted with g.
    T tail = (T(1) - weight_sum) * (g[0] * background[0] + g[1] * background[1] + g[2] * background[2]);
    for (std::int64_t k = s.samples - 1; k >= 0; --k) {
      const T gdotc = g[0] * c[k * 3] + g[1] * c[k * 3 + 1] + g[2] * c[k * 3 + 2];
      gs[k] = dl[k] * (t_after[k] * gdotc - tail);
      for (int j = 0; j < 3; ++j) gc[k * 3 + j] = w[k] * g[j];
      tail += w[k] * gdotc;
    }
  }
}

namespace reference {

// Transmittances recomputed from scratch per sample; O(S^2) per ray.
template <typename T>
void composite(const CompositeShape& s, const T* sigma, const T* rgb, const T* delta,
               const T* background, T* out_rgb, T* transmittance) {
  for (std::int64_t r = 0; r < s.rays; ++r) {
    T acc[3] = {0, 0, 0};
    T weight_sum = 0;
    for (std::int64_t i = 0; i < s.samples; ++i) {
      T before = 0;
      for (std::int64_t j = 0; j < i; ++j) before += sigma[r * s.samples + j] * delta[r * s.samples + j];
      const T w = std::exp(-before) * (T(1) - std::exp(-sigma[r * s.samples + i] * delta[r * s.samples + i]));
      weight_sum += w;
      for (int k = 0; k < 3; ++k) acc[k] += w * rgb[(r * s.samples + i) * 3 + k];
    }
    for (int k = 0; k < 3; ++k) out_rgb[r * 3 + k] = acc[k] + (T(1) - weight_sum) * background[k];
    if (transmittance != nullptr) transmittance[r] = T(1) - weight_sum;
  }
}

// dC/dtau_k = T_{k+1} c_k - sum_{i>k} w_i c_i - T_end bg, each sum formed explicitly.
template <typename T>
void composite_backward(const CompositeShape& s, const T* sigma, const T* rgb, const T* delta,
                        const T* background, const T* grad_out, T* grad_sigma, T* grad_rgb) {
  for (std::int64_t r = 0; r < s.rays; ++r) {
    const T* sg = sigma + r * s.samples;
    const T* dl = delta + r * s.samples;
    const T* c = rgb + r * s.samples * 3;
    const T* g = grad_out + r * 3;
    auto trans_before = [&](std::int64_t i) {
      T od = 0;
      for (std::int64_t j = 0; j < i; ++j) od += sg[j] * dl[j];
      return std::exp(-od);
    };
    auto weight = [&](std::int64_t i) { return trans_before(i) * (T(1) - std::exp(-sg[i] * dl[i])); };
    const T t_end = trans_before(s.samples);
    for (std::int64_t k = 0; k < s.samples; ++k) {
      T d[3];
      for (int j = 0; j < 3; ++j) d[j] = trans_before(k + 1) * c[k * 3 + j] - t_end * background[j];
      for (std::int64_t i = k + 1; i < s.samples; ++i) {
        const T wi = weight(i);
        for (int j = 0; j < 3; ++j) d[j] -= wi * c[i * 3 + j];
      }
      grad_sigma[r * s.samples + k] = dl[k] * (g[0] * d[0] + g[1] * d[1] + g[2] * d[2]);
      const T wk = weight(k);
      for (int j = 0; j < 3; ++j) grad_rgb[(r * s.samples + k) * 3 + j] = wk * g[j];
    }
  }
}

#define RAV_INSTANTIATE(T)                                                                         \
  template void composite<T>(const CompositeShape&, const T*, const T*, const T*, const T*, T*, T*); \
  template void composite_backward<T>(const CompositeShape&, const T*, const T*, const T*,          \
                                      const T*, const T*, T*, T*);
RAV_INSTANTIATE(float)
RAV_INSTANTIATE(double)

}  // namespace reference

RAV_INSTANTIATE(float)
RAV_INSTANTIATE(double)
#undef RAV_INSTANTIATE

}  // namespace rav::kernels
