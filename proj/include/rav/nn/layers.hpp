#pragma once

#include <torch/torch.h>

namespace rav::nn {

/// x + conv3(relu(conv3(x))), channel count preserved.
class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  /// Zeroes the second conv so the block starts as the identity.
  void zero_branch();

 private:
  torch::nn::Conv2d a_{nullptr}, b_{nullptr};
};
TORCH_MODULE(ResBlock);

/// PatchGAN: conv4 s2 -> conv4 s2 -> conv4 s1, padding 1 throughout, leaky
/// ReLU 0.2 between. An H x W input gives (H/4 - 1) x (W/4 - 1) logits for H, W
/// divisible by 4.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl(int in_channels, int base_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

inline std::int64_t patch_map_size(std::int64_t input) { return input / 4 - 1; }

inline torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = -1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding < 0 ? kernel / 2 : padding));
}

inline torch::Tensor upsample2(const torch::Tensor& x) {
  return torch::nn::functional::interpolate(
      x, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace rav::nn
