#include "rav/avatar3d/avatar.hpp"

#include <chrono>
#include <cmath>

#include "rav/core/error.hpp"
#include "rav/core/random.hpp"
#include "rav/nn/common.hpp"
#include "rav/nn/layers.hpp"

namespace rav::avatar3d {
namespace {

using nlohmann::json;
namespace F = torch::nn::functional;

constexpr int kRegressorSide = 16;

bool power_of_two_multiple(int n, int base) {
  if (base <= 0 || n < base || n % base != 0) return false;
  const int k = n / base;
  return (k & (k - 1)) == 0;
}

ImageBuffer fit_size(const ImageBuffer& img, int size) {
  if (img.height() == size && img.width() == size) return img;
  return resize_bilinear(img, size, size);
}

landmarks::LandmarkSet scale_landmarks(landmarks::LandmarkSet lm, double factor) {
  for (auto& [name, p] : lm.points) {
    p.x *= factor;
    p.y *= factor;
  }
  return lm;
}

torch::Tensor select_rows(const torch::Tensor& t, const torch::Tensor& idx) {
  return t.defined() ? t.index_select(0, idx) : t;
}

template <typename T>
std::vector<T> select_items(const std::vector<T>& v, const std::vector<std::int64_t>& idx) {
  std::vector<T> out;
  if (v.empty()) return out;
  for (auto i : idx) out.push_back(v.at(static_cast<std::size_t>(i)));
  return out;
}

json tensor_json(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat64).contiguous();
  return {{"shape", c.sizes().vec()}, {"data", std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel())}};
}

torch::Tensor json_tensor(const json& j) {
  auto data = j.at("data").get<std::vector<double>>();
  const auto shape = j.at("shape").get<std::vector<std::int64_t>>();
  return torch::tensor(data, torch::kFloat64).reshape(shape).clone();
}

/// T_combined rendered without gradient (stage-2 input).
torch::Tensor combined_render_frozen(const AvatarModel& model, const AvatarSet& batch, const RayBundle& rays) {
  torch::NoGradGuard guard;
  const auto pose = front_pose(model.config.input_size);
  const auto planes = combine(global_branch(model, batch.source, pose), detail_branch(model, batch.source),
                              expression_branch(model, batch.expression));
  return volume_render(model, planes, rays);
}

std::uint64_t jitter_seed(std::uint64_t seed, int stage, int step) {
  return mix64(mix64(seed ^ 0xA1) + static_cast<std::uint64_t>(stage) * 0x100000000ULL + static_cast<std::uint64_t>(step));
}

}  // namespace

void AvatarConfig::validate() const {
  auto cfg = [](bool ok, const std::string& m) { require(ok, m, ErrorCategory::invalid_config); };
  cfg(triplane_resolution >= 2 && triplane_channels >= 1, "tri-plane resolution must be >= 2 and channels >= 1");
  cfg(power_of_two_multiple(input_size, triplane_resolution),
      "input_size must be the tri-plane resolution times a power of two");
  cfg(half_extent > 0.0 && std::isfinite(half_extent), "half_extent must be positive");
  cfg(encoder_width >= 1 && attention_blocks >= 0 && attention_heads >= 1 && res_blocks >= 0,
      "encoder sizes out of range");
  cfg(encoder_width % attention_heads == 0, "encoder width must be divisible by the attention heads");
  cfg(decoder_hidden >= 1 && sr_width >= 1, "decoder and SR widths must be positive");
  cfg(render_resolution >= 4 && samples_per_ray >= 1, "render resolution >= 4 and samples >= 1 required");
  cfg(sr_factor == 2 || sr_factor == 4, "sr_factor must be 2 or 4");
  cfg(background >= 0.0 && background <= 1.0, "background must be in [0, 1]");
  cfg(eval_jitter >= 0.0 && eval_jitter < 1.0, "eval_jitter must be in [0, 1)");
  cfg(stage1.global >= 0.0 && stage1.combined >= 0.0 && stage2.l1 >= 0.0 && stage2.lpips >= 0.0 &&
          stage2.gan >= 0.0 && stage2.eye >= 0.0,
      "loss weights must be non-negative");
  cfg(disc_scales >= 1 && disc_channels >= 1, "discriminator sizes must be positive");
  const int out = output_resolution();
  const int unit = 4 << (disc_scales - 1);
  cfg(out % unit == 0 && (out >> (disc_scales - 1)) >= 8,
      "output resolution too small or not divisible for the discriminator scales");
  cfg(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  cfg(stage1_steps >= 0 && stage2_steps >= 0 && batch >= 1, "steps/batch out of range");
  cfg(regressor_ridge > 0.0, "regressor_ridge must be positive");
}

json AvatarConfig::to_json() const {
  return {{"input_size", input_size},
          {"triplane_resolution", triplane_resolution},
          {"triplane_channels", triplane_channels},
          {"half_extent", half_extent},
          {"encoder_width", encoder_width},
          {"attention_blocks", attention_blocks},
          {"attention_heads", attention_heads},
          {"res_blocks", res_blocks},
          {"decoder_hidden", decoder_hidden},
          {"render_resolution", render_resolution},
          {"samples_per_ray", samples_per_ray},
          {"sr_factor", sr_factor},
          {"sr_width", sr_width},
          {"background", background},
          {"eval_jitter", eval_jitter},
          {"lambda_G", stage1.global},
          {"lambda_Combined", stage1.combined},
          {"lambda_L1", stage2.l1},
          {"lambda_LPIPS", stage2.lpips},
          {"lambda_GAN", stage2.gan},
          {"lambda_Eye", stage2.eye},
          {"disc_scales", disc_scales},
          {"disc_channels", disc_channels},
          {"lr", lr},
          {"stage1_steps", stage1_steps},
          {"stage2_steps", stage2_steps},
          {"batch", batch},
          {"regressor_ridge", regressor_ridge},
          {"seed", seed}};
}

AvatarConfig AvatarConfig::from_json(const json& j) {
  AvatarConfig c;
  try {
    c.input_size = j.value("input_size", c.input_size);
    c.triplane_resolution = j.value("triplane_resolution", c.triplane_resolution);
    c.triplane_channels = j.value("triplane_channels", c.triplane_channels);
    c.half_extent = j.value("half_extent", c.half_extent);
    c.encoder_width = j.value("encoder_width", c.encoder_width);
    c.attention_blocks = j.value("attention_blocks", c.attention_blocks);
    c.attention_heads = j.value("attention_heads", c.attention_heads);
    c.res_blocks = j.value("res_blocks", c.res_blocks);
    c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
    c.render_resolution = j.value("render_resolution", c.render_resolution);
    c.samples_per_ray = j.value("samples_per_ray", c.samples_per_ray);
    c.sr_factor = j.value("sr_factor", c.sr_factor);
    c.sr_width = j.value("sr_width", c.sr_width);
    c.background = j.value("background", c.background);
    c.eval_jitter = j.value("eval_jitter", c.eval_jitter);
    c.stage1.global = j.value("lambda_G", c.stage1.global);
    c.stage1.combined = j.value("lambda_Combined", c.stage1.combined);
    c.stage2.l1 = j.value("lambda_L1", c.stage2.l1);
    c.stage2.lpips = j.value("lambda_LPIPS", c.stage2.lpips);
    c.stage2.gan = j.value("lambda_GAN", c.stage2.gan);
    c.stage2.eye = j.value("lambda_Eye", c.stage2.eye);
    c.disc_scales = j.value("disc_scales", c.disc_scales);
    c.disc_channels = j.value("disc_channels", c.disc_channels);
    c.lr = j.value("lr", c.lr);
    c.stage1_steps = j.value("stage1_steps", c.stage1_steps);
    c.stage2_steps = j.value("stage2_steps", c.stage2_steps);
    c.batch = j.value("batch", c.batch);
    c.regressor_ridge = j.value("regressor_ridge", c.regressor_ridge);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::invalid_config, std::string("bad avatar config: ") + e.what());
  }
  c.validate();
  return c;
}

TriplaneEncoderImpl::TriplaneEncoderImpl(const AvatarConfig& cfg, int in_channels, int attention_blocks)
    : r_(cfg.triplane_resolution), c_(cfg.triplane_channels) {
  const int w = cfg.encoder_width;
  trunk_ = torch::nn::Sequential();
  trunk_->push_back(nn::conv(in_channels, w, 3));
  trunk_->push_back(torch::nn::ReLU());
  for (int size = cfg.input_size; size > r_; size /= 2) {
    trunk_->push_back(nn::conv(w, w, 4, 2, 1));
    trunk_->push_back(torch::nn::ReLU());
  }
  for (int i = 0; i < cfg.res_blocks; ++i) trunk_->push_back(nn::ResBlock(w));
  register_module("trunk", trunk_);
  attn_ = torch::nn::ModuleList();
  for (int i = 0; i < attention_blocks; ++i) attn_->push_back(restore2d::CrossAttention(w, cfg.attention_heads, r_));
  register_module("attn", attn_);
  head_ = register_module("head", nn::conv(w, 3 * c_, 1));
}

torch::Tensor TriplaneEncoderImpl::forward(const torch::Tensor& x) {
  auto h = trunk_->forward(x);
  for (const auto& m : *attn_) h = m->as<restore2d::CrossAttention>()->forward(h, h);
  const auto b = x.size(0);
  return head_(h).view({b, 3, c_, r_, r_}).permute({0, 1, 3, 4, 2}).contiguous();
}

void TriplaneEncoderImpl::zero_head() { nn::zero_parameters(*head_); }

void TriplaneEncoderImpl::zero_residual_branches() {
  for (auto& m : trunk_->children())
    if (auto* r = m->as<nn::ResBlock>()) r->zero_branch();
  for (const auto& m : *attn_)
    for (auto& item : m->named_children())
      if (item.key() == "out") nn::zero_parameters(*item.value());
}

FieldDecoderImpl::FieldDecoderImpl(int channels, int hidden) {
  fc1_ = register_module("fc1", torch::nn::Linear(channels, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, 4));
}

std::pair<torch::Tensor, torch::Tensor> FieldDecoderImpl::forward(const torch::Tensor& features) {
  const auto o = fc2_(F::softplus(fc1_(features)));
  return {F::softplus(o.select(-1, 0)), torch::sigmoid(o.narrow(-1, 1, 3))};
}

SuperResolutionImpl::SuperResolutionImpl(int factor, int width) : factor_(factor) {
  a_ = register_module("a", nn::conv(3, width, 3));
  b_ = register_module("b", nn::conv(width, width, 3));
  head_ = register_module("head", nn::conv(width, 3, 3));
}

torch::Tensor SuperResolutionImpl::upsample(const torch::Tensor& low) const {
  return F::interpolate(low, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{double(factor_), double(factor_)})
                                 .mode(torch::kBicubic)
                                 .align_corners(false));
}

torch::Tensor SuperResolutionImpl::forward(const torch::Tensor& low) {
  const auto up = upsample(low);
  return torch::clamp(up + head_(torch::relu(b_(torch::relu(a_(up))))), 0.0, 1.0);
}

void SuperResolutionImpl::zero_head() { nn::zero_parameters(*head_); }

torch::Tensor ExpressionRegressor::features(const ImageBuffer& img) {
  const auto small = resize_bilinear(to_grayscale(img), kRegressorSide, kRegressorSide);
  return torch::tensor(std::vector<double>(small.data().begin(), small.data().end()), torch::kFloat64);
}

std::vector<double> ExpressionRegressor::predict(const ImageBuffer& img) const {
  require(fitted(), "expression regressor has not been fitted", ErrorCategory::missing_artifact);
  const auto y = torch::matmul((features(img) - mean_x).unsqueeze(0), weights).squeeze(0) + mean_y;
  return std::vector<double>(y.data_ptr<double>(), y.data_ptr<double>() + y.numel());
}

AvatarModel::AvatarModel(const AvatarConfig& cfg) : config(cfg) {
  cfg.validate();
  global = TriplaneEncoder(cfg, 5, cfg.attention_blocks);
  detail = TriplaneEncoder(cfg, 3, 0);
  expression = TriplaneEncoder(cfg, 3, 0);
  decoder = FieldDecoder(cfg.triplane_channels, cfg.decoder_hidden);
  sr = SuperResolution(cfg.sr_factor, cfg.sr_width);
  disc = restore2d::MultiscaleDiscriminator(cfg.disc_scales, 3, cfg.disc_channels);
  std::uint64_t s = cfg.seed;
  for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{global.get(), detail.get(), expression.get(),
                                                                         decoder.get(), sr.get(), disc.get()})
    nn::seeded_init(*m, s = mix64(s ^ 0xAB), 1.0);
  for (auto* e : {&global, &detail, &expression}) {
    (*e)->zero_head();
    (*e)->zero_residual_branches();
  }
  sr->zero_head();
  proxy = metrics::PerceptualProxy();
}

void AvatarModel::to(torch::Dtype dtype) {
  for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{global.get(), detail.get(), expression.get(),
                                                                         decoder.get(), sr.get(), disc.get(),
                                                                         proxy.get()})
    m->to(dtype);
}

torch::Dtype AvatarModel::dtype() const { return decoder->parameters().front().scalar_type(); }

std::vector<torch::Tensor> AvatarModel::stage1_parameters() const {
  std::vector<torch::Tensor> out;
  for (const torch::nn::Module* m :
       std::initializer_list<const torch::nn::Module*>{global.get(), detail.get(), expression.get(), decoder.get()})
    for (const auto& p : m->parameters()) out.push_back(p);
  return out;
}

std::vector<torch::Tensor> AvatarModel::sr_parameters() const { return sr->parameters(); }

std::string AvatarModel::parameter_hash() const {
  return nn::parameter_hash(*global) + nn::parameter_hash(*detail) + nn::parameter_hash(*expression) +
         nn::parameter_hash(*decoder) + nn::parameter_hash(*sr) + nn::parameter_hash(*disc);
}

void save_avatar(const std::filesystem::path& path, const AvatarModel& model) {
  json meta{{"kind", "avatar"}, {"config", model.config.to_json()}};
  if (model.regressor.fitted())
    meta["regressor"] = {{"weights", tensor_json(model.regressor.weights)},
                         {"mean_x", tensor_json(model.regressor.mean_x)},
                         {"mean_y", tensor_json(model.regressor.mean_y)}};
  nn::save_checkpoint(path, meta,
                      {{"global", model.global.get()},
                       {"detail", model.detail.get()},
                       {"expression", model.expression.get()},
                       {"decoder", model.decoder.get()},
                       {"sr", model.sr.get()},
                       {"disc", model.disc.get()}});
}

AvatarModel load_avatar(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCategory::missing_artifact, "checkpoint not found: " + path.string());
  const json meta = nn::read_checkpoint_meta(path);
  require(meta.value("kind", "") == "avatar", "checkpoint is not an avatar model", ErrorCategory::format_error);
  AvatarModel model(AvatarConfig::from_json(meta.at("config")));
  nn::load_checkpoint(path, {{"global", model.global.get()},
                             {"detail", model.detail.get()},
                             {"expression", model.expression.get()},
                             {"decoder", model.decoder.get()},
                             {"sr", model.sr.get()},
                             {"disc", model.disc.get()}});
  if (meta.contains("regressor")) {
    const auto& r = meta.at("regressor");
    model.regressor.weights = json_tensor(r.at("weights"));
    model.regressor.mean_x = json_tensor(r.at("mean_x"));
    model.regressor.mean_y = json_tensor(r.at("mean_y"));
  }
  return model;
}

torch::Tensor global_branch(const AvatarModel& model, const torch::Tensor& source, const morphable::CameraPose& pose) {
  require(source.dim() == 4 && source.size(1) == 3, "global branch expects [B, 3, H, W]");
  const auto b = source.size(0), h = source.size(2), w = source.size(3);
  const auto yaw = torch::full({b, 1, h, w}, pose.yaw_deg / 90.0, source.options());
  const auto pitch = torch::full({b, 1, h, w}, pose.pitch_deg / 90.0, source.options());
  return model.global.ptr()->forward(torch::cat({source, yaw, pitch}, 1));
}

torch::Tensor detail_branch(const AvatarModel& model, const torch::Tensor& source) {
  require(source.dim() == 4 && source.size(1) == 3, "detail branch expects [B, 3, H, W]");
  return model.detail.ptr()->forward(source);
}

torch::Tensor expression_branch(const AvatarModel& model, const torch::Tensor& expression_render) {
  require(expression_render.dim() == 4 && expression_render.size(1) == 3, "expression branch expects [B, 3, H, W]");
  return model.expression.ptr()->forward(expression_render);
}

torch::Tensor combine(const torch::Tensor& t_g, const torch::Tensor& t_d, const torch::Tensor& t_e) {
  require(t_g.sizes() == t_d.sizes() && t_g.sizes() == t_e.sizes(), "tri-planes differ in shape");
  return t_g + (t_d + t_e);
}

RayBundle make_rays(const morphable::CameraPose& pose, int resolution, int samples, double half_extent,
                    std::optional<double> fixed_jitter, std::uint64_t seed, torch::Dtype dtype) {
  require(resolution >= 1 && samples >= 1 && half_extent > 0.0, "bad ray bundle parameters");
  const std::int64_t rays = static_cast<std::int64_t>(resolution) * resolution;
  std::vector<double> points(static_cast<std::size_t>(rays * samples * 3), 0.0);
  std::vector<double> delta(static_cast<std::size_t>(rays * samples), 0.0);
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(rays), 0);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      const std::int64_t r = static_cast<std::int64_t>(y) * resolution + x;
      std::array<double, 3> o, d;
      morphable::pixel_ray(pose, x, y, o, d);
      double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
      bool miss = false;
      for (int a = 0; a < 3 && !miss; ++a) {
        if (std::abs(d[a]) < 1e-15) {
          miss = o[a] < -half_extent || o[a] > half_extent;
          continue;
        }
        double ta = (-half_extent - o[a]) / d[a], tb = (half_extent - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
      }
      if (miss || !(t1 > t0)) continue;
      hit[r] = 1;
      const double step = (t1 - t0) / samples;
      std::vector<double> t(samples);
      for (int i = 0; i < samples; ++i) {
        const double u = fixed_jitter ? *fixed_jitter : hash_uniform(seed, static_cast<std::uint64_t>(r * samples + i));
        t[i] = t0 + (i + u) * step;
      }
      for (int i = 0; i < samples; ++i) {
        const auto k = static_cast<std::size_t>(r * samples + i);
        delta[k] = (i + 1 < samples ? t[i + 1] : t1) - t[i];
        for (int a = 0; a < 3; ++a) points[3 * k + a] = o[a] + t[i] * d[a];
      }
    }
  RayBundle b;
  b.resolution = resolution;
  b.samples = samples;
  b.points = torch::tensor(points, torch::kFloat64).view({rays * samples, 3}).to(dtype);
  b.delta = torch::tensor(delta, torch::kFloat64).view({rays, samples}).to(dtype);
  b.hit = torch::tensor(std::vector<std::int64_t>(hit.begin(), hit.end())).to(torch::kBool);
  return b;
}

RenderOutput render_field(const Field& field, const RayBundle& rays, double background) {
  const auto [sigma, rgb] = field(rays.points);
  const auto n = rays.delta.size(0), s = rays.delta.size(1);
  require(sigma.numel() == n * s && rgb.numel() == n * s * 3, "field output does not match the ray samples");
  const auto bg = torch::full({3}, background, sigma.options());
  torch::Tensor trans;
  const auto out = composite(sigma.reshape({n, s}), rgb.reshape({n, s, 3}), rays.delta.to(sigma.scalar_type()), bg, &trans);
  const int res = rays.resolution;
  return {out.view({res, res, 3}).permute({2, 0, 1}), trans.view({res, res})};
}

torch::Tensor volume_render(const AvatarModel& model, const torch::Tensor& planes, const RayBundle& rays) {
  require(planes.dim() == 5, "volume_render expects [B, 3, R, R, C] tri-planes");
  const auto b = planes.size(0);
  const auto n = rays.delta.size(0), s = rays.delta.size(1);
  const auto pts = rays.points.to(planes.scalar_type()).unsqueeze(0).expand({b, n * s, 3});
  const auto feats = sample_triplane(planes, pts, model.config.half_extent);
  const auto [sigma, rgb] = model.decoder.ptr()->forward(feats);
  const auto bg = torch::full({3}, model.config.background, planes.options());
  const auto out = composite(sigma.reshape({b * n, s}), rgb.reshape({b * n, s, 3}),
                             rays.delta.to(planes.scalar_type()).repeat({b, 1}), bg);
  const int res = rays.resolution;
  return out.view({b, res, res, 3}).permute({0, 3, 1, 2});
}

torch::Tensor volume_render(const AvatarModel& model, const torch::Tensor& planes, const morphable::CameraPose& pose,
                            int resolution) {
  const auto rays = make_rays(pose, resolution, model.config.samples_per_ray, model.config.half_extent,
                              model.config.eval_jitter, 0, planes.scalar_type());
  return volume_render(model, planes, rays);
}

torch::Tensor super_resolve(const AvatarModel& model, const torch::Tensor& low) {
  require(low.dim() == 4 && low.size(1) == 3, "super_resolve expects [B, 3, H, W]");
  return model.sr.ptr()->forward(low);
}

AvatarSet AvatarSet::select(const std::vector<std::int64_t>& idx) const {
  const auto t = torch::tensor(idx, torch::kInt64);
  AvatarSet out;
  out.source = select_rows(source, t);
  out.expression = select_rows(expression, t);
  out.neutral = select_rows(neutral, t);
  out.target_low = select_rows(target_low, t);
  out.target = select_rows(target, t);
  out.eye_windows = select_items(eye_windows, idx);
  out.beta = select_items(beta, idx);
  out.target_images = select_items(target_images, idx);
  return out;
}

ImageBuffer expression_render(const morphable::MorphableModel& mm, const std::vector<double>& beta, int size) {
  require(static_cast<int>(beta.size()) == mm.num_expression, "expression coefficients do not match the model");
  auto coeffs = morphable::CoefficientPair::zeros(mm);
  coeffs.expression = beta;
  return morphable::render_3dmm(mm, coeffs, front_pose(size), size);
}

AvatarSet make_avatar_set(const std::vector<datasim::VRSample>& samples, const morphable::MorphableModel& mm,
                          const AvatarConfig& cfg) {
  cfg.validate();
  require(!samples.empty(), "avatar set needs samples", ErrorCategory::invalid_config);
  const int in = cfg.input_size, low = cfg.render_resolution, out = cfg.output_resolution();
  std::vector<ImageBuffer> source, expr, neutral, target_low, target;
  AvatarSet set;
  for (const auto& s : samples) {
    source.push_back(fit_size(s.dp_image, in));
    expr.push_back(expression_render(mm, s.coeffs.expression, in));
    auto n = s.coeffs;
    std::fill(n.expression.begin(), n.expression.end(), 0.0);
    neutral.push_back(morphable::render_3dmm(mm, n, front_pose(low), low, {.background = cfg.background}));
    target_low.push_back(fit_size(s.full_face, low));
    target.push_back(fit_size(s.full_face, out));
    const auto lm = scale_landmarks(s.landmarks, static_cast<double>(out) / s.full_face.width());
    set.eye_windows.push_back(landmarks::eye_band_window(lm, out, out));
    set.beta.push_back(s.coeffs.expression);
    set.target_images.push_back(s.full_face);
  }
  set.source = nn::to_batch(source);
  set.expression = nn::to_batch(expr);
  set.neutral = nn::to_batch(neutral);
  set.target_low = nn::to_batch(target_low);
  set.target = nn::to_batch(target);
  return set;
}

std::map<std::string, double> Stage1Loss::values() const {
  return {{"global_l1", global_l1.item<double>()},
          {"global_lpips", global_lpips.item<double>()},
          {"combined_l1", combined_l1.item<double>()},
          {"combined_lpips", combined_lpips.item<double>()},
          {"L_G", l_global.item<double>()},
          {"L_Combined", l_combined.item<double>()},
          {"total", total.item<double>()}};
}

std::map<std::string, double> Stage2Loss::values() const {
  return {{"l1", l1.item<double>()},         {"lpips", lpips.item<double>()},
          {"gan", gan.item<double>()},       {"eye_l1", eye_l1.item<double>()},
          {"eye_lpips", eye_lpips.item<double>()}, {"total", total.item<double>()}};
}

Stage1Loss stage1_terms(const AvatarModel& model, const torch::Tensor& render_global,
                        const torch::Tensor& render_combined, const AvatarSet& batch) {
  require(render_global.sizes() == batch.neutral.sizes(), "global render does not match the neutral targets");
  require(render_combined.sizes() == batch.target_low.sizes(), "combined render does not match the targets");
  auto& proxy = *model.proxy.ptr();
  Stage1Loss l;
  l.global_l1 = nn::l1(render_global, batch.neutral);
  l.global_lpips = proxy.forward(render_global, batch.neutral).mean();
  l.combined_l1 = nn::l1(render_combined, batch.target_low);
  l.combined_lpips = proxy.forward(render_combined, batch.target_low).mean();
  l.l_global = l.global_l1 + l.global_lpips;
  l.l_combined = l.combined_l1 + l.combined_lpips;
  const auto& w = model.config.stage1;
  l.total = w.global * l.l_global + w.combined * l.l_combined;
  return l;
}

Stage1Loss stage1_loss(const AvatarModel& model, const AvatarSet& batch, const RayBundle& rays) {
  const auto t_g = global_branch(model, batch.source, front_pose(model.config.input_size));
  const auto planes = combine(t_g, detail_branch(model, batch.source), expression_branch(model, batch.expression));
  return stage1_terms(model, volume_render(model, t_g, rays), volume_render(model, planes, rays), batch);
}

Stage2Loss stage2_terms(const AvatarModel& model, const torch::Tensor& output, const AvatarSet& batch) {
  require(output.sizes() == batch.target.sizes(), "SR output does not match the targets");
  require(batch.eye_windows.size() == static_cast<std::size_t>(output.size(0)), "one eye window per sample required");
  auto& proxy = *model.proxy.ptr();
  Stage2Loss l;
  l.l1 = nn::l1(output, batch.target);
  l.lpips = proxy.forward(output, batch.target).mean();
  l.gan = restore2d::adversarial_generator_term(model.disc.ptr()->forward(output));
  l.eye_l1 = torch::zeros({}, output.options());
  l.eye_lpips = torch::zeros({}, output.options());
  for (std::int64_t i = 0; i < output.size(0); ++i) {
    const auto& w = batch.eye_windows[static_cast<std::size_t>(i)];
    auto crop = [&](const torch::Tensor& t) {
      return t[i].narrow(1, w.y0, w.height).narrow(2, w.x0, w.width).unsqueeze(0);
    };
    const auto o = crop(output), t = crop(batch.target);
    l.eye_l1 = l.eye_l1 + nn::l1(o, t);
    l.eye_lpips = l.eye_lpips + proxy.forward(o, t).mean();
  }
  l.eye_l1 = l.eye_l1 / static_cast<double>(output.size(0));
  l.eye_lpips = l.eye_lpips / static_cast<double>(output.size(0));
  const auto& w = model.config.stage2;
  l.total = w.l1 * l.l1 + w.lpips * l.lpips + w.gan * l.gan + w.eye * (l.eye_l1 + l.eye_lpips);
  return l;
}

Stage2Loss stage2_loss(const AvatarModel& model, const AvatarSet& batch, const RayBundle& rays) {
  return stage2_terms(model, super_resolve(model, combined_render_frozen(model, batch, rays)), batch);
}

AvatarResult train_avatar(AvatarModel& model, const AvatarSet& data) {
  const auto& cfg = model.config;
  cfg.validate();
  const auto n = data.size();
  require(n > 0, "avatar training needs samples", ErrorCategory::invalid_config);
  require(data.source.size(2) == cfg.input_size && data.expression.size(2) == cfg.input_size,
          "avatar inputs do not match the configured input size", ErrorCategory::invalid_config);
  require(data.target_low.size(2) == cfg.render_resolution && data.neutral.size(2) == cfg.render_resolution,
          "avatar low-resolution targets do not match the render resolution", ErrorCategory::invalid_config);
  require(data.target.size(2) == cfg.output_resolution() && data.eye_windows.size() == static_cast<std::size_t>(n),
          "avatar targets do not match the output resolution", ErrorCategory::invalid_config);

  const auto dtype = model.dtype();
  AvatarSet all = data;
  for (auto* t : {&all.source, &all.expression, &all.neutral, &all.target_low, &all.target}) *t = t->to(dtype);
  Rng rng = make_rng(cfg.seed, 0xA7A);
  auto draw = [&] {
    std::vector<std::int64_t> idx(cfg.batch);
    for (auto& i : idx) i = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n));
    return all.select(idx);
  };
  const auto pose = front_pose(cfg.render_resolution);
  AvatarResult result;

  if (cfg.stage1_steps > 0) {
    torch::optim::Adam opt(model.stage1_parameters(), torch::optim::AdamOptions(cfg.lr));
    for (int step = 0; step < cfg.stage1_steps; ++step) {
      const auto batch = draw();
      const auto rays = make_rays(pose, cfg.render_resolution, cfg.samples_per_ray, cfg.half_extent, std::nullopt,
                                  jitter_seed(cfg.seed, 1, step), dtype);
      opt.zero_grad();
      const auto l = stage1_loss(model, batch, rays);
      l.total.backward();
      opt.step();
      result.history.add(step, "stage1", l.values());
    }
  }

  if (cfg.stage2_steps > 0) {
    torch::optim::Adam opt_sr(model.sr_parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.999}));
    torch::optim::Adam opt_d(model.disc->parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.999}));
    auto set_d_grad = [&](bool on) {
      for (auto& p : model.disc->parameters()) p.set_requires_grad(on);
    };
    for (int step = 0; step < cfg.stage2_steps; ++step) {
      const auto batch = draw();
      const auto rays = make_rays(pose, cfg.render_resolution, cfg.samples_per_ray, cfg.half_extent, std::nullopt,
                                  jitter_seed(cfg.seed, 2, step), dtype);
      const auto low = combined_render_frozen(model, batch, rays);
      torch::Tensor fake;
      {
        torch::NoGradGuard guard;
        fake = super_resolve(model, low);
      }
      set_d_grad(true);
      opt_d.zero_grad();
      const auto dl = restore2d::discriminator_loss(model.disc, batch.target, fake);
      dl.total.backward();
      opt_d.step();
      result.history.add(step, "stage2_D", dl.values());

      set_d_grad(false);
      opt_sr.zero_grad();
      const auto l = stage2_terms(model, super_resolve(model, low), batch);
      l.total.backward();
      opt_sr.step();
      result.history.add(step, "stage2", l.values());
    }
    set_d_grad(true);
  }

  if (!data.target_images.empty() && !data.beta.empty()) {
    std::vector<torch::Tensor> xs, ys;
    for (std::size_t i = 0; i < data.target_images.size(); ++i) {
      xs.push_back(ExpressionRegressor::features(data.target_images[i]));
      ys.push_back(torch::tensor(data.beta[i], torch::kFloat64));
    }
    const auto x = torch::stack(xs), y = torch::stack(ys);
    auto& r = model.regressor;
    r.mean_x = x.mean(0);
    r.mean_y = y.mean(0);
    const auto xc = x - r.mean_x, yc = y - r.mean_y;
    const auto gram = torch::matmul(xc.t(), xc) + cfg.regressor_ridge * torch::eye(x.size(1), torch::kFloat64);
    r.weights = torch::linalg_solve(gram, torch::matmul(xc.t(), yc));
  }
  return result;
}

DriveResult drive_avatar(const AvatarModel& model, const morphable::MorphableModel& mm, const ImageBuffer& source,
                         const ImageBuffer& target_restored, const morphable::CameraPose& pose,
                         const std::optional<std::vector<double>>& beta) {
  require(source.channels() == 3, "drive_avatar: source must be RGB");
  require(pose.cx > 0.0, "drive_avatar: pose has no intrinsics");
  const auto t0 = std::chrono::steady_clock::now();
  torch::NoGradGuard guard;
  const auto& cfg = model.config;
  const auto dtype = model.dtype();
  const auto b = beta ? *beta : model.regressor.predict(target_restored);
  const auto src = nn::to_batch({fit_size(source, cfg.input_size)}, dtype);
  const auto ie = nn::to_batch({expression_render(mm, b, cfg.input_size)}, dtype);
  const auto planes = combine(global_branch(model, src, front_pose(cfg.input_size)), detail_branch(model, src),
                              expression_branch(model, ie));
  const auto render_pose = pose.scaled(cfg.render_resolution / (2.0 * pose.cx));
  const auto low = volume_render(model, planes, render_pose, cfg.render_resolution);
  const auto out = super_resolve(model, low);
  DriveResult r;
  r.image = nn::to_image(out[0]);
  r.low_res = nn::to_image(low[0]);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

morphable::CameraPose front_pose(int resolution) { return morphable::CameraPose::make(0, 0, resolution); }

}  // namespace rav::avatar3d
