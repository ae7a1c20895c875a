#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "rav/align/align.hpp"
#include "rav/core/image.hpp"
#include "rav/core/loss_history.hpp"
#include "rav/datasim/datasim.hpp"
#include "rav/landmarks/landmarks.hpp"
#include "rav/metrics/metrics.hpp"
#include "rav/nn/layers.hpp"

namespace rav::restore2d {

enum class Fusion { cross_attention, concat };

struct GeneratorConfig {
  int levels = 3;                     // feature scales H, H/2, H/4, ...
  std::vector<int> channels{16, 32, 64};
  std::vector<int> heads{1, 2, 4};
  std::vector<int> res_blocks{1, 1, 2};
  int kv_grid = 16;  // reference features are average pooled to at most kv_grid^2 tokens
  Fusion fusion = Fusion::cross_attention;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

struct LossWeights {
  double adv = 0.1;
  double l1 = 1.0;
  double lpips = 0.5;

  void validate() const;
};

struct RestoreConfig {
  int height = 64;
  int width = 64;
  GeneratorConfig generator;
  int disc_scales = 3;
  int disc_channels = 16;
  LossWeights weights;
  bool literal_adversarial = false;  // minimise log(1 - D(G)) instead of -log D(G)
  bool zero_reference = false;       // ablation: z is replaced by zeros
  double p_swap = 0.5;
  double lr = 1e-4;
  int steps = 0;
  int batch = 4;
  double feather = 4.0;
  int checkpoint_every = 0;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static RestoreConfig from_json(const nlohmann::json& j);
};

/// Scaled dot-product attention split into `heads` groups of channels.
/// q: [B, N, C], k and v: [B, M, C]. When `weights` is given it receives the
/// softmax weights [B, heads, N, M].
torch::Tensor multihead_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v, int heads,
                                  torch::Tensor* weights = nullptr);

/// Queries from input features, keys and values from (pooled) reference
/// features; the projected attention output is added to the input features.
class CrossAttentionImpl : public torch::nn::Module {
 public:
  CrossAttentionImpl(int channels, int heads, int kv_grid);
  torch::Tensor forward(const torch::Tensor& f_input, const torch::Tensor& f_reference);
  int heads() const { return heads_; }

 private:
  int heads_, kv_grid_;
  torch::nn::Conv2d q_{nullptr}, k_{nullptr}, v_{nullptr}, out_{nullptr};
};
TORCH_MODULE(CrossAttention);

/// Ablation fusion: f_input + conv1x1([f_input, f_reference]).
class ConcatFusionImpl : public torch::nn::Module {
 public:
  explicit ConcatFusionImpl(int channels);
  torch::Tensor forward(const torch::Tensor& f_input, const torch::Tensor& f_reference);

 private:
  torch::nn::Conv2d mix_{nullptr};
};
TORCH_MODULE(ConcatFusion);

/// Multi-scale convolutional encoder; returns one feature map per level.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const GeneratorConfig& cfg);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  torch::nn::ModuleList stems_{nullptr};
  std::vector<torch::nn::Sequential> blocks_;
};
TORCH_MODULE(Encoder);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& cfg);
  /// x: composite input, z: reference, both [B, 3, H, W] in [0, 1].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);
  /// Zeroes residual-branch outputs, attention outputs and the output head, so
  /// the initial generator returns x.
  void zero_branches();

 private:
  GeneratorConfig cfg_;
  Encoder e_input_{nullptr}, e_reference_{nullptr};
  std::vector<std::shared_ptr<torch::nn::Module>> fusion_;
  torch::nn::ModuleList up_{nullptr}, merge_{nullptr};
  std::vector<torch::nn::Sequential> dec_blocks_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Generator);

/// One PatchGAN per scale; scale s sees the image average-pooled by 2^s.
class MultiscaleDiscriminatorImpl : public torch::nn::Module {
 public:
  MultiscaleDiscriminatorImpl(int scales, int in_channels, int base_channels);
  std::vector<torch::Tensor> forward(const torch::Tensor& img);
  int scales() const { return static_cast<int>(ds_.size()); }

 private:
  std::vector<nn::PatchDiscriminator> ds_;
};
TORCH_MODULE(MultiscaleDiscriminator);

/// Logit-map side length at discriminator scale s for an input of side n.
inline std::int64_t disc_map_size(std::int64_t n, int scale) { return nn::patch_map_size(n >> scale); }

struct GeneratorLoss {
  torch::Tensor adv, l1, lpips, total;
  std::map<std::string, double> values() const;
};

struct DiscriminatorLoss {
  torch::Tensor real, fake, total;
  std::map<std::string, double> values() const;
};

/// Non-saturating adversarial term: mean over scales of mean softplus(-l).
/// The literal form returns mean over scales of -mean softplus(l), i.e. log(1 - D).
torch::Tensor adversarial_generator_term(const std::vector<torch::Tensor>& fake_logits, bool literal = false);

/// total = adv * L_adv + l1 * mean|G - y| + lpips * perceptual(G, y).
GeneratorLoss generator_loss(const torch::Tensor& g_out, const torch::Tensor& y,
                             const std::vector<torch::Tensor>& fake_logits, const LossWeights& w,
                             metrics::PerceptualProxy& proxy, bool literal = false);
/// Per scale softplus(-l_real) + softplus(l_fake) (means), averaged over scales.
DiscriminatorLoss discriminator_loss(const std::vector<torch::Tensor>& real_logits,
                                     const std::vector<torch::Tensor>& fake_logits);
DiscriminatorLoss discriminator_loss(MultiscaleDiscriminator& d, const torch::Tensor& y, const torch::Tensor& g_out);

struct RestorationModel {
  RestoreConfig config;
  Generator g{nullptr};
  MultiscaleDiscriminator d{nullptr};
  metrics::PerceptualProxy proxy{nullptr};

  explicit RestorationModel(const RestoreConfig& cfg);
  void to(torch::Dtype dtype);
  std::string parameter_hash() const;
};

void save_restoration(const std::filesystem::path& path, const RestorationModel& model);
RestorationModel load_restoration(const std::filesystem::path& path);

/// x, z, y images plus the identity of each sample (used for reference swaps).
struct RestorationSet {
  std::vector<ImageBuffer> x, z, y;
  std::vector<std::uint64_t> identity;
  std::vector<landmarks::LandmarkSet> landmarks;

  std::size_t size() const { return x.size(); }
};

/// Builds composites from frontal eye crops and the lower crop pasted over the
/// DP image. When `aligners` is given, the tilted-view crops listed in
/// `eye_tag` are frontalised with the eye slots (and the lower crop with the
/// face slot when present) before pasting.
RestorationSet make_restoration_set(const std::vector<datasim::VRSample>& samples, double feather = 4.0,
                                    const align::AlignmentModelSet* aligners = nullptr,
                                    const std::string& eye_tag = "front");

/// G(x, z) for a batch; shape mismatch -> contract_violation.
std::vector<ImageBuffer> generate(const RestorationModel& model, const std::vector<ImageBuffer>& x,
                                  const std::vector<ImageBuffer>& z);

struct RestoreResult {
  LossHistory history;
  std::vector<std::filesystem::path> checkpoints;
};

/// Alternating discriminator and generator Adam steps. History has one "G" and
/// one "D" row per step.
RestoreResult train_restoration(RestorationModel& model, const RestorationSet& data,
                                const std::filesystem::path& checkpoint_dir = {});

/// Pastes the crops onto the DP image and restores the full face with z = dp.
ImageBuffer restore(const RestorationModel& model, const ImageBuffer& eye_left, const ImageBuffer& eye_right,
                    const ImageBuffer& lower, const ImageBuffer& dp, const landmarks::LandmarkSet& lm);

using landmarks::crop_eye_region;

/// Mean over eye windows of the per-pixel channel variance of `img`. With
/// `gray_source`, only pixels where that image has zero chroma count.
double eye_window_chroma(const ImageBuffer& img, const landmarks::LandmarkSet& lm,
                         const ImageBuffer* gray_source = nullptr);

}  // namespace rav::restore2d
