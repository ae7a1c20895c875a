#pragma once

#include <torch/torch.h>

namespace rav::avatar3d {

/// Differentiable tri-plane lookup (gradient flows to the planes only).
/// planes: [B, 3, R, R, C]; points: [B, N, 3] in the cube of half side
/// `half_extent`. Returns [B, N, C], the sum of the three bilinear lookups.
torch::Tensor sample_triplane(const torch::Tensor& planes, const torch::Tensor& points, double half_extent = 1.0);

/// Differentiable emission-absorption compositing.
/// sigma: [R, S] >= 0, rgb: [R, S, 3], delta: [R, S] (no gradient), background:
/// 3 values. Returns [R, 3]. When `transmittance` is given it receives the
/// residual transmittance per ray (no gradient).
torch::Tensor composite(const torch::Tensor& sigma, const torch::Tensor& rgb, const torch::Tensor& delta,
                        const torch::Tensor& background, torch::Tensor* transmittance = nullptr);

}  // namespace rav::avatar3d
