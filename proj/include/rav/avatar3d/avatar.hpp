#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "rav/avatar3d/ops.hpp"
#include "rav/core/image.hpp"
#include "rav/core/loss_history.hpp"
#include "rav/datasim/datasim.hpp"
#include "rav/metrics/metrics.hpp"
#include "rav/morphable/model.hpp"
#include "rav/morphable/render.hpp"
#include "rav/restore2d/restore.hpp"

namespace rav::avatar3d {

struct Stage1Weights {
  double global = 1.0;    // lambda_G
  double combined = 1.0;  // lambda_Combined
};

struct Stage2Weights {
  double l1 = 1.0;
  double lpips = 0.5;
  double gan = 0.1;
  double eye = 1.0;
};

struct AvatarConfig {
  int input_size = 64;         // branch input resolution (I_s, I_e)
  int triplane_resolution = 16;
  int triplane_channels = 16;
  double half_extent = 1.0;    // bounds cube [-h, h]^3
  int encoder_width = 32;
  int attention_blocks = 1;
  int attention_heads = 2;
  int res_blocks = 1;
  int decoder_hidden = 32;
  int render_resolution = 32;
  int samples_per_ray = 16;
  int sr_factor = 2;
  int sr_width = 16;
  double background = 1.0;
  double eval_jitter = 0.5;    // fixed stratification offset outside training
  Stage1Weights stage1;
  Stage2Weights stage2;
  int disc_scales = 2;
  int disc_channels = 16;
  double lr = 1e-4;
  int stage1_steps = 0;
  int stage2_steps = 0;
  int batch = 4;
  double regressor_ridge = 1e-2;
  std::uint64_t seed = 1;

  int output_resolution() const { return render_resolution * sr_factor; }
  void validate() const;
  nlohmann::json to_json() const;
  static AvatarConfig from_json(const nlohmann::json& j);
};

/// Conv downsampling to the tri-plane resolution, optional self-attention
/// blocks over the R x R tokens, and a zero-initialised 1x1 head producing the
/// three planes. Output: [B, 3, R, R, C].
class TriplaneEncoderImpl : public torch::nn::Module {
 public:
  TriplaneEncoderImpl(const AvatarConfig& cfg, int in_channels, int attention_blocks);
  torch::Tensor forward(const torch::Tensor& x);
  void zero_head();
  void zero_residual_branches();

 private:
  int r_, c_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::ModuleList attn_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(TriplaneEncoder);

/// C -> hidden -> 4 perceptron: softplus density and logistic colour.
class FieldDecoderImpl : public torch::nn::Module {
 public:
  FieldDecoderImpl(int channels, int hidden);
  /// features [..., C] -> {sigma [...], rgb [..., 3]}
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& features);

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(FieldDecoder);

/// clamp(bicubic(x) + residual(bicubic(x)), 0, 1); the residual head starts at zero.
class SuperResolutionImpl : public torch::nn::Module {
 public:
  SuperResolutionImpl(int factor, int width);
  torch::Tensor forward(const torch::Tensor& low);
  torch::Tensor upsample(const torch::Tensor& low) const;
  void zero_head();
  int factor() const { return factor_; }

 private:
  int factor_;
  torch::nn::Conv2d a_{nullptr}, b_{nullptr}, head_{nullptr};
};
TORCH_MODULE(SuperResolution);

/// Ridge regression from a 16 x 16 grayscale thumbnail to expression
/// coefficients (used when no oracle beta is available at drive time).
struct ExpressionRegressor {
  torch::Tensor weights;  // [F, K] float64
  torch::Tensor mean_x;   // [F]
  torch::Tensor mean_y;   // [K]

  bool fitted() const { return weights.defined(); }
  static torch::Tensor features(const ImageBuffer& img);
  std::vector<double> predict(const ImageBuffer& img) const;
};

struct AvatarModel {
  AvatarConfig config;
  TriplaneEncoder global{nullptr}, detail{nullptr}, expression{nullptr};
  FieldDecoder decoder{nullptr};
  SuperResolution sr{nullptr};
  restore2d::MultiscaleDiscriminator disc{nullptr};
  metrics::PerceptualProxy proxy{nullptr};
  ExpressionRegressor regressor;

  explicit AvatarModel(const AvatarConfig& cfg);
  void to(torch::Dtype dtype);
  torch::Dtype dtype() const;
  /// Parameters of the branches and the field decoder (stage 1).
  std::vector<torch::Tensor> stage1_parameters() const;
  std::vector<torch::Tensor> sr_parameters() const;
  std::string parameter_hash() const;
};

void save_avatar(const std::filesystem::path& path, const AvatarModel& model);
AvatarModel load_avatar(const std::filesystem::path& path);

/// Branches. Inputs are [B, 3, input_size, input_size] in [0, 1].
torch::Tensor global_branch(const AvatarModel& model, const torch::Tensor& source, const morphable::CameraPose& pose);
torch::Tensor detail_branch(const AvatarModel& model, const torch::Tensor& source);
torch::Tensor expression_branch(const AvatarModel& model, const torch::Tensor& expression_render);
/// Elementwise sum T_g + (T_d + T_e), so swapping T_d and T_e is exact.
torch::Tensor combine(const torch::Tensor& t_g, const torch::Tensor& t_d, const torch::Tensor& t_e);

/// Stratified samples along the camera rays of a square image.
struct RayBundle {
  int resolution = 0;
  int samples = 0;
  torch::Tensor points;  // [rays * samples, 3]; rays missing the cube sample the origin
  torch::Tensor delta;   // [rays, samples]; zero for missing rays
  torch::Tensor hit;     // [rays] bool
};

/// Ray-cube slab intersection; samples at t_i = t_near + (i + u_i) L / S with
/// u_i = hash_uniform(jitter_seed, .) or the fixed offset `fixed_jitter` when
/// given. delta_i = t_{i+1} - t_i and the last segment ends at t_far.
RayBundle make_rays(const morphable::CameraPose& pose, int resolution, int samples, double half_extent,
                    std::optional<double> fixed_jitter, std::uint64_t jitter_seed = 0,
                    torch::Dtype dtype = torch::kFloat32);

/// A radiance field evaluated at [N, 3] points: {sigma [N], rgb [N, 3]}.
using Field = std::function<std::pair<torch::Tensor, torch::Tensor>(const torch::Tensor& points)>;

struct RenderOutput {
  torch::Tensor image;          // [3, H, W]
  torch::Tensor transmittance;  // [H, W]
};
RenderOutput render_field(const Field& field, const RayBundle& rays, double background);

/// Low-resolution renders of a batch of tri-planes: [B, 3, res, res].
torch::Tensor volume_render(const AvatarModel& model, const torch::Tensor& planes, const RayBundle& rays);
/// Deterministic render (fixed stratification offset) at `pose`, whose
/// intrinsics must match `resolution`.
torch::Tensor volume_render(const AvatarModel& model, const torch::Tensor& planes, const morphable::CameraPose& pose,
                            int resolution);
torch::Tensor super_resolve(const AvatarModel& model, const torch::Tensor& low);

/// Training tensors for one set of identities.
struct AvatarSet {
  torch::Tensor source;      // I_s [N, 3, in, in]
  torch::Tensor expression;  // I_e [N, 3, in, in]
  torch::Tensor neutral;     // R_3DMM(I_s) at the render resolution
  torch::Tensor target_low;  // I_t at the render resolution
  torch::Tensor target;      // I_t at the output resolution
  std::vector<PixelWindow> eye_windows;  // eye band of I_t at the output resolution
  std::vector<std::vector<double>> beta;
  std::vector<ImageBuffer> target_images;  // I_t at the dataset resolution (regressor fit)

  std::int64_t size() const { return source.defined() ? source.size(0) : 0; }
  AvatarSet select(const std::vector<std::int64_t>& idx) const;
};

/// Sources are the DP images, targets the ground-truth full faces, I_e the
/// morphable render with zero identity and the sample's expression.
AvatarSet make_avatar_set(const std::vector<datasim::VRSample>& samples, const morphable::MorphableModel& mm,
                          const AvatarConfig& cfg);
ImageBuffer expression_render(const morphable::MorphableModel& mm, const std::vector<double>& beta, int size);

struct Stage1Loss {
  torch::Tensor global_l1, global_lpips, combined_l1, combined_lpips, l_global, l_combined, total;
  std::map<std::string, double> values() const;
};

struct Stage2Loss {
  torch::Tensor l1, lpips, gan, eye_l1, eye_lpips, total;
  std::map<std::string, double> values() const;
};

/// L_G = L1 + perceptual of R(T_g) against R_3DMM(I_s); L_Combined likewise for
/// R(T_g + T_d + T_e) against I_t; total = lambda_G L_G + lambda_Combined L_Combined.
Stage1Loss stage1_loss(const AvatarModel& model, const AvatarSet& batch, const RayBundle& rays);
/// Composes the stage-1 terms from precomputed renders.
Stage1Loss stage1_terms(const AvatarModel& model, const torch::Tensor& render_global, const torch::Tensor& render_combined,
                        const AvatarSet& batch);
/// Branches and decoder run without gradient; only the SR module is trainable.
/// total = l1 L1 + lpips P + gan L_adv + eye (L1_eye + P_eye).
Stage2Loss stage2_loss(const AvatarModel& model, const AvatarSet& batch, const RayBundle& rays);
Stage2Loss stage2_terms(const AvatarModel& model, const torch::Tensor& output, const AvatarSet& batch);

struct AvatarResult {
  LossHistory history;
};

/// Stage 1 (branches + decoder, low resolution), then stage 2 (SR only, with a
/// discriminator). History phases: "stage1", "stage2", "stage2_D". Also fits
/// the expression regressor on the set.
AvatarResult train_avatar(AvatarModel& model, const AvatarSet& data);

struct DriveResult {
  ImageBuffer image;        // I_o
  ImageBuffer low_res;
  double seconds = 0.0;
};

/// End-to-end inference: branches -> combine -> render at `pose` -> SR. The
/// expression image comes from `beta` when given, else from the regressor
/// applied to the restored target. `pose` intrinsics may be for any square
/// image size; they are rescaled to the render resolution.
DriveResult drive_avatar(const AvatarModel& model, const morphable::MorphableModel& mm, const ImageBuffer& source,
                         const ImageBuffer& target_restored, const morphable::CameraPose& pose,
                         const std::optional<std::vector<double>>& beta = std::nullopt);

/// Front pose at a given image size (matches the dataset renders).
morphable::CameraPose front_pose(int resolution);

}  // namespace rav::avatar3d
