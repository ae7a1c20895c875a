#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "rav/core/image.hpp"

namespace rav::nn {

/// HWC image -> [C, H, W] tensor of `dtype`.
torch::Tensor to_tensor(const ImageBuffer& img, torch::Dtype dtype = torch::kFloat32);
/// Stack of same-shape images -> [B, C, H, W].
torch::Tensor to_batch(const std::vector<ImageBuffer>& imgs, torch::Dtype dtype = torch::kFloat32);
/// [C, H, W] or [1, C, H, W] tensor -> HWC image (values copied as double).
ImageBuffer to_image(const torch::Tensor& t);

/// Deterministic re-initialisation from `seed`, independent of torch's global
/// generator: weights of rank >= 2 get orthogonal init scaled by `gain`, biases
/// and rank-1 parameters are zeroed (norm scales are set to one).
void seeded_init(torch::nn::Module& module, std::uint64_t seed, double gain = 1.0);
/// Zeroes every parameter of `module` (used for identity-friendly output heads).
void zero_parameters(torch::nn::Module& module);
/// Normal(0, std) fill of every parameter from `seed`.
void seeded_normal(torch::nn::Module& module, std::uint64_t seed, double std);

torch::Tensor normal_tensor(torch::IntArrayRef shape, std::uint64_t seed, double std = 1.0,
                            torch::Dtype dtype = torch::kFloat32);

/// Deep copies of all parameters, in registration order.
std::vector<torch::Tensor> snapshot(const torch::nn::Module& module);
bool bit_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b);
/// sha256 over parameter names, shapes and float bytes.
std::string parameter_hash(const torch::nn::Module& module);

/// Checkpoint in the named-array archive format with magic "RAVCK1". Every
/// parameter and buffer of each module is stored as "<prefix>/<name>" (float32);
/// `meta` is stored as the byte array "meta.json".
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::map<std::string, const torch::nn::Module*>& modules);
/// Reads only the metadata (to rebuild modules with the right configuration).
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);
/// Copies stored arrays into the modules; shape or name mismatch -> format_error.
nlohmann::json load_checkpoint(const std::filesystem::path& path,
                               const std::map<std::string, torch::nn::Module*>& modules);

/// Mean absolute error as a scalar tensor.
inline torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().mean(); }

/// Relative error |a - b| / max(|a|, |b|, floor) used by the gradient checks.
double relative_error(double a, double b, double floor = 1e-8);

}  // namespace rav::nn
