#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "rav/align/gaze.hpp"
#include "rav/core/image.hpp"
#include "rav/core/loss_history.hpp"
#include "rav/datasim/datasim.hpp"
#include "rav/nn/layers.hpp"

namespace rav::align {

enum class Slot { left_eye, right_eye, face };
std::string slot_name(Slot s);  // "CG_LE", "CG_RE", "CG_Face"
Slot parse_slot(const std::string& name);

enum class Architecture { cyclegan, autoencoder };
enum class HeadInit { identity, random };

struct AlignConfig {
  int height = 32;
  int width = 32;
  int channels = 1;  // image channels (crops are grayscale)
  int base_channels = 16;
  int res_blocks = 2;
  Architecture architecture = Architecture::cyclegan;
  HeadInit head_init = HeadInit::identity;
  double head_init_std = 0.05;  // random heads
  double lambda_adv = 1.0;
  double lambda_cyc = 10.0;
  double lambda_id = 0.5;
  double lambda_paired = 0.0;  // L1 to paired targets when the data is paired
  double lr = 1e-4;
  int steps = 0;
  int batch = 8;
  int checkpoint_every = 0;  // 0: no intermediate checkpoints
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static AlignConfig from_json(const nlohmann::json& j);
};

/// Residual encoder-decoder: two stride-2 convs, residual blocks with a
/// learned mixing across all bottleneck positions (so global warps such as
/// rotations are representable), nearest-neighbour upsampling, and an output
/// head added to the input. A zero head makes the generator the identity.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const AlignConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d& head() { return head_; }
  /// Residual blocks and position mixers start as the identity.
  void zero_residual_branches();

 private:
  torch::nn::Conv2d in_{nullptr}, down1_{nullptr}, down2_{nullptr}, up1_{nullptr}, up2_{nullptr}, head_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::ModuleList mixers_{nullptr};
};
TORCH_MODULE(Generator);

using PatchDiscriminator = nn::PatchDiscriminator;

/// One alignment model: A is the tilted domain, B the frontal one.
struct AlignmentModel {
  AlignConfig config;
  Generator g_ab{nullptr}, g_ba{nullptr};
  PatchDiscriminator d_a{nullptr}, d_b{nullptr};

  explicit AlignmentModel(const AlignConfig& cfg);
  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;
  std::string parameter_hash() const;
  void to(torch::Dtype dtype);
};

struct AlignmentModelSet {
  std::map<Slot, AlignmentModel> slots;

  AlignmentModel& at(Slot s);
  const AlignmentModel& at(Slot s) const;
  bool has(Slot s) const { return slots.count(s) > 0; }
};

void save_alignment(const std::filesystem::path& path, const AlignmentModelSet& set);
AlignmentModelSet load_alignment(const std::filesystem::path& path);

/// Frontalises crops with generator A->B; outputs are clamped to [0, 1].
/// Shape must match the slot's training shape.
std::vector<ImageBuffer> align(const AlignmentModel& model, const std::vector<ImageBuffer>& crops);
ImageBuffer align(const AlignmentModel& model, const ImageBuffer& crop);

struct LossRecord {
  torch::Tensor adv_a, adv_b, cyc, identity, paired, total;
  std::map<std::string, double> values() const;
};

/// Generator-side losses. adv_b scores G_AB(a) with D_B and adv_a scores
/// G_BA(b) with D_A (least-squares form). `paired_b` may be undefined.
/// total = l_adv (adv_a + adv_b) + l_cyc cyc + l_id identity + l_paired paired.
LossRecord cycle_losses(AlignmentModel& model, const torch::Tensor& batch_a, const torch::Tensor& batch_b,
                        bool paired);
/// Least-squares discriminator loss on real batches and detached fakes.
torch::Tensor discriminator_losses(AlignmentModel& model, const torch::Tensor& batch_a, const torch::Tensor& batch_b,
                                   const torch::Tensor& fake_a, const torch::Tensor& fake_b);
/// Autoencoder variant: L1(G_AB(a), b) on paired data.
torch::Tensor autoencoder_loss(AlignmentModel& model, const torch::Tensor& batch_a, const torch::Tensor& batch_b);

struct AlignData {
  std::vector<ImageBuffer> a;  // tilted
  std::vector<ImageBuffer> b;  // frontal
  bool paired = false;         // a[i] corresponds to b[i]
};

struct AlignResult {
  LossHistory history;
  std::vector<std::filesystem::path> checkpoints;
};

/// Alternating generator / discriminator Adam steps (one history row per step).
/// When `checkpoint_dir` is set and checkpoint_every > 0, writes
/// step_NNNNNN.ravck files at that cadence.
AlignResult train_alignment(AlignmentModel& model, const AlignData& data,
                            const std::filesystem::path& checkpoint_dir = {}, Slot slot = Slot::left_eye);

/// Tilted/frontal crops for one slot from a dataset. Eye slots are paired
/// (tilted crops with the same sample's frontal crop); the face slot is not.
AlignData slot_data(const std::vector<datasim::VRSample>& samples, Slot slot);

/// Toy domain: parametric eyes with random gaze (B) and their 90-degree
/// rotations (A). Gazes are returned for evaluation.
struct ToyRotationSet {
  AlignData data;
  std::vector<Gaze> gaze;
  EyeCorners corners;
};
ToyRotationSet make_rotation_toy_set(int n, int size, std::uint64_t seed);
ImageBuffer rotate90(const ImageBuffer& img);  // counter-clockwise

}  // namespace rav::align
