#include "rav/nn/layers.hpp"

namespace rav::nn {

ResBlockImpl::ResBlockImpl(int channels) {
  a_ = register_module("a", conv(channels, channels, 3));
  b_ = register_module("b", conv(channels, channels, 3));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) { return x + b_(torch::relu(a_(x))); }

void ResBlockImpl::zero_branch() {
  torch::NoGradGuard guard;
  b_->weight.zero_();
  b_->bias.zero_();
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int in_channels, int base_channels) {
  c1_ = register_module("c1", conv(in_channels, base_channels, 4, 2, 1));
  c2_ = register_module("c2", conv(base_channels, 2 * base_channels, 4, 2, 1));
  c3_ = register_module("c3", conv(2 * base_channels, 1, 4, 1, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  auto h = torch::leaky_relu(c1_(x), 0.2);
  h = torch::leaky_relu(c2_(h), 0.2);
  return c3_(h);
}

}  // namespace rav::nn
