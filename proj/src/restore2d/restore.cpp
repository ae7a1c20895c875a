#include "rav/restore2d/restore.hpp"

#include <cmath>

#include "rav/core/error.hpp"
#include "rav/core/random.hpp"
#include "rav/nn/common.hpp"

namespace rav::restore2d {
namespace {

using nlohmann::json;
namespace F = torch::nn::functional;

constexpr double kLogitEps = 1e-4;

torch::Dtype module_dtype(const torch::nn::Module& m) { return m.parameters().front().scalar_type(); }

torch::nn::Sequential res_stack(int channels, int count) {
  torch::nn::Sequential s;
  for (int i = 0; i < count; ++i) s->push_back(nn::ResBlock(channels));
  return s;
}

void zero_stack(torch::nn::Sequential& s) {
  for (auto& m : s->children()) m->as<nn::ResBlock>()->zero_branch();
}

/// [B, C, H, W] -> [B, H*W, C].
torch::Tensor tokens(const torch::Tensor& f) { return f.flatten(2).transpose(1, 2); }

std::vector<int> int_list(const json& j, const std::vector<int>& fallback) {
  return j.is_array() ? j.get<std::vector<int>>() : fallback;
}

}  // namespace

void GeneratorConfig::validate() const {
  auto cfg = [](bool ok, const std::string& m) { require(ok, m, ErrorCategory::invalid_config); };
  cfg(levels >= 1, "generator needs at least one scale");
  const auto n = static_cast<std::size_t>(levels);
  cfg(channels.size() == n && heads.size() == n && res_blocks.size() == n,
      "generator channels/heads/res_blocks must list one value per scale");
  for (std::size_t i = 0; i < n; ++i) {
    cfg(channels[i] >= 1 && heads[i] >= 1 && res_blocks[i] >= 0, "generator sizes must be positive");
    cfg(channels[i] % heads[i] == 0, "generator channels must be divisible by the attention heads");
  }
  cfg(kv_grid >= 1, "kv_grid must be >= 1");
}

json GeneratorConfig::to_json() const {
  return {{"levels", levels},         {"channels", channels},
          {"heads", heads},           {"res_blocks", res_blocks},
          {"kv_grid", kv_grid},       {"fusion", fusion == Fusion::cross_attention ? "cross_attention" : "concat"}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
  GeneratorConfig c;
  c.levels = j.value("levels", c.levels);
  c.channels = int_list(j.value("channels", json()), c.channels);
  c.heads = int_list(j.value("heads", json()), c.heads);
  c.res_blocks = int_list(j.value("res_blocks", json()), c.res_blocks);
  c.kv_grid = j.value("kv_grid", c.kv_grid);
  const std::string fusion = j.value("fusion", std::string("cross_attention"));
  require(fusion == "cross_attention" || fusion == "concat", "fusion must be cross_attention or concat",
          ErrorCategory::invalid_config);
  c.fusion = fusion == "concat" ? Fusion::concat : Fusion::cross_attention;
  c.validate();
  return c;
}

void LossWeights::validate() const {
  for (double v : {adv, l1, lpips})
    require(std::isfinite(v) && v >= 0.0, "loss weights must be finite and >= 0", ErrorCategory::invalid_config);
}

void RestoreConfig::validate() const {
  auto cfg = [](bool ok, const std::string& m) { require(ok, m, ErrorCategory::invalid_config); };
  generator.validate();
  weights.validate();
  cfg(disc_scales >= 1 && disc_channels >= 1, "discriminator scales/channels must be >= 1");
  const int gen_div = 1 << (generator.levels - 1);
  cfg(height % gen_div == 0 && width % gen_div == 0, "image size must be divisible by 2^(levels-1)");
  const int disc_div = 1 << (disc_scales - 1);
  cfg(height % (4 * disc_div) == 0 && width % (4 * disc_div) == 0 && height / disc_div >= 8 && width / disc_div >= 8,
      "image size too small or not divisible for the discriminator scales");
  cfg(p_swap >= 0.0 && p_swap <= 1.0, "p_swap must be in [0, 1]");
  cfg(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  cfg(steps >= 0 && batch >= 1 && checkpoint_every >= 0, "steps/batch/checkpoint_every out of range");
  cfg(feather >= 0.0, "feather must be >= 0");
}

json RestoreConfig::to_json() const {
  return {{"height", height},
          {"width", width},
          {"generator", generator.to_json()},
          {"disc_scales", disc_scales},
          {"disc_channels", disc_channels},
          {"lambda_adv", weights.adv},
          {"lambda_l1", weights.l1},
          {"lambda_lpips", weights.lpips},
          {"literal_adversarial", literal_adversarial},
          {"zero_reference", zero_reference},
          {"p_swap", p_swap},
          {"lr", lr},
          {"steps", steps},
          {"batch", batch},
          {"feather", feather},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed}};
}

RestoreConfig RestoreConfig::from_json(const json& j) {
  RestoreConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    if (j.contains("generator")) c.generator = GeneratorConfig::from_json(j.at("generator"));
    c.disc_scales = j.value("disc_scales", c.disc_scales);
    c.disc_channels = j.value("disc_channels", c.disc_channels);
    c.weights.adv = j.value("lambda_adv", c.weights.adv);
    c.weights.l1 = j.value("lambda_l1", c.weights.l1);
    c.weights.lpips = j.value("lambda_lpips", c.weights.lpips);
    c.literal_adversarial = j.value("literal_adversarial", c.literal_adversarial);
    c.zero_reference = j.value("zero_reference", c.zero_reference);
    c.p_swap = j.value("p_swap", c.p_swap);
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.feather = j.value("feather", c.feather);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::invalid_config, std::string("bad restore config: ") + e.what());
  }
  c.validate();
  return c;
}

torch::Tensor multihead_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v, int heads,
                                  torch::Tensor* weights) {
  require(q.dim() == 3 && k.dim() == 3 && v.dim() == 3, "attention expects [B, N, C] tensors");
  require(k.sizes() == v.sizes() && q.size(0) == k.size(0) && q.size(2) == k.size(2), "attention shape mismatch");
  const auto b = q.size(0), n = q.size(1), m = k.size(1), c = q.size(2);
  require(heads >= 1 && c % heads == 0, "attention channels must be divisible by heads");
  const auto d = c / heads;
  auto split = [&](const torch::Tensor& t, std::int64_t len) { return t.reshape({b, len, heads, d}).transpose(1, 2); };
  const auto qh = split(q, n), kh = split(k, m), vh = split(v, m);
  const auto w = torch::softmax(torch::matmul(qh, kh.transpose(2, 3)) / std::sqrt(static_cast<double>(d)), -1);
  if (weights) *weights = w;
  return torch::matmul(w, vh).transpose(1, 2).reshape({b, n, c});
}

CrossAttentionImpl::CrossAttentionImpl(int channels, int heads, int kv_grid) : heads_(heads), kv_grid_(kv_grid) {
  q_ = register_module("q", nn::conv(channels, channels, 1));
  k_ = register_module("k", nn::conv(channels, channels, 1));
  v_ = register_module("v", nn::conv(channels, channels, 1));
  out_ = register_module("out", nn::conv(channels, channels, 1));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& f_input, const torch::Tensor& f_reference) {
  auto ref = f_reference;
  if (ref.size(2) > kv_grid_ || ref.size(3) > kv_grid_)
    ref = F::adaptive_avg_pool2d(ref, F::AdaptiveAvgPool2dFuncOptions(
                                          {std::min<std::int64_t>(ref.size(2), kv_grid_),
                                           std::min<std::int64_t>(ref.size(3), kv_grid_)}));
  const auto att = multihead_attention(tokens(q_(f_input)), tokens(k_(ref)), tokens(v_(ref)), heads_);
  const auto s = f_input.sizes();
  return f_input + out_(att.transpose(1, 2).reshape(s));
}

ConcatFusionImpl::ConcatFusionImpl(int channels) { mix_ = register_module("mix", nn::conv(2 * channels, channels, 1)); }

torch::Tensor ConcatFusionImpl::forward(const torch::Tensor& f_input, const torch::Tensor& f_reference) {
  return f_input + mix_(torch::cat({f_input, f_reference}, 1));
}

EncoderImpl::EncoderImpl(const GeneratorConfig& cfg) {
  stems_ = register_module("stems", torch::nn::ModuleList());
  for (int l = 0; l < cfg.levels; ++l) {
    if (l == 0)
      stems_->push_back(nn::conv(3, cfg.channels[0], 3));
    else
      stems_->push_back(nn::conv(cfg.channels[l - 1], cfg.channels[l], 4, 2, 1));
    blocks_.push_back(register_module("blocks" + std::to_string(l), res_stack(cfg.channels[l], cfg.res_blocks[l])));
  }
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = x;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    h = torch::relu(stems_[l]->as<torch::nn::Conv2d>()->forward(h));
    if (!blocks_[l]->is_empty()) h = blocks_[l]->forward(h);
    out.push_back(h);
  }
  return out;
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  e_input_ = register_module("e_input", Encoder(cfg));
  e_reference_ = register_module("e_reference", Encoder(cfg));
  up_ = register_module("up", torch::nn::ModuleList());
  merge_ = register_module("merge", torch::nn::ModuleList());
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string n = std::to_string(l);
    if (cfg.fusion == Fusion::cross_attention)
      fusion_.push_back(register_module("attn" + n, CrossAttention(cfg.channels[l], cfg.heads[l], cfg.kv_grid).ptr()));
    else
      fusion_.push_back(register_module("concat" + n, ConcatFusion(cfg.channels[l]).ptr()));
    dec_blocks_.push_back(register_module("dec" + n, res_stack(cfg.channels[l], cfg.res_blocks[l])));
    if (l + 1 < cfg.levels) {
      up_->push_back(nn::conv(cfg.channels[l + 1], cfg.channels[l], 3));
      merge_->push_back(nn::conv(2 * cfg.channels[l], cfg.channels[l], 3));
    }
  }
  head_ = register_module("head", nn::conv(cfg.channels[0], 3, 3));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& z) {
  require(x.dim() == 4 && x.sizes() == z.sizes(), "generator: x and z must have the same [B, 3, H, W] shape");
  require(x.size(1) == 3, "generator: expected 3-channel images");
  const int div = 1 << (cfg_.levels - 1);
  require(x.size(2) % div == 0 && x.size(3) % div == 0, "generator: image size not divisible by 2^(levels-1)");
  const auto fi = e_input_->forward(x), fr = e_reference_->forward(z);
  std::vector<torch::Tensor> fused;
  for (int l = 0; l < cfg_.levels; ++l) {
    if (cfg_.fusion == Fusion::cross_attention)
      fused.push_back(std::static_pointer_cast<CrossAttentionImpl>(fusion_[l])->forward(fi[l], fr[l]));
    else
      fused.push_back(std::static_pointer_cast<ConcatFusionImpl>(fusion_[l])->forward(fi[l], fr[l]));
  }
  auto h = fused.back();
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    if (l + 1 < cfg_.levels) {
      h = torch::relu(up_[l]->as<torch::nn::Conv2d>()->forward(nn::upsample2(h)));
      h = torch::relu(merge_[l]->as<torch::nn::Conv2d>()->forward(torch::cat({h, fused[l]}, 1)));
    }
    if (!dec_blocks_[l]->is_empty()) h = dec_blocks_[l]->forward(h);
  }
  const auto base = torch::logit(x.clamp(kLogitEps, 1.0 - kLogitEps));
  return torch::sigmoid(base + head_(h));
}

void GeneratorImpl::zero_branches() {
  for (auto& m : e_input_->modules(false))
    if (auto* r = m->as<nn::ResBlock>()) r->zero_branch();
  for (auto& m : e_reference_->modules(false))
    if (auto* r = m->as<nn::ResBlock>()) r->zero_branch();
  for (auto& s : dec_blocks_) zero_stack(s);
  for (auto& f : fusion_) {
    if (cfg_.fusion == Fusion::cross_attention) {
      for (auto& item : f->named_children())
        if (item.key() == "out") nn::zero_parameters(*item.value());
    } else {
      nn::zero_parameters(*f);
    }
  }
  nn::zero_parameters(*head_);
}

MultiscaleDiscriminatorImpl::MultiscaleDiscriminatorImpl(int scales, int in_channels, int base_channels) {
  require(scales >= 1, "discriminator needs at least one scale", ErrorCategory::invalid_config);
  for (int s = 0; s < scales; ++s)
    ds_.push_back(register_module("d" + std::to_string(s), nn::PatchDiscriminator(in_channels, base_channels)));
}

std::vector<torch::Tensor> MultiscaleDiscriminatorImpl::forward(const torch::Tensor& img) {
  std::vector<torch::Tensor> out;
  auto h = img;
  for (std::size_t s = 0; s < ds_.size(); ++s) {
    if (s > 0) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    out.push_back(ds_[s]->forward(h));
  }
  return out;
}

std::map<std::string, double> GeneratorLoss::values() const {
  return {{"adv", adv.item<double>()}, {"l1", l1.item<double>()}, {"lpips", lpips.item<double>()},
          {"total", total.item<double>()}};
}

std::map<std::string, double> DiscriminatorLoss::values() const {
  return {{"d_real", real.item<double>()}, {"d_fake", fake.item<double>()}, {"total", total.item<double>()}};
}

torch::Tensor adversarial_generator_term(const std::vector<torch::Tensor>& fake_logits, bool literal) {
  require(!fake_logits.empty(), "adversarial term needs at least one logit map");
  auto sum = torch::zeros({}, fake_logits.front().options());
  for (const auto& l : fake_logits) sum = sum + (literal ? -F::softplus(l).mean() : F::softplus(-l).mean());
  return sum / static_cast<double>(fake_logits.size());
}

GeneratorLoss generator_loss(const torch::Tensor& g_out, const torch::Tensor& y,
                             const std::vector<torch::Tensor>& fake_logits, const LossWeights& w,
                             metrics::PerceptualProxy& proxy, bool literal) {
  require(g_out.sizes() == y.sizes(), "generator loss: output and target differ in shape");
  GeneratorLoss r;
  r.adv = adversarial_generator_term(fake_logits, literal);
  r.l1 = nn::l1(g_out, y);
  if (w.lpips > 0.0) {
    r.lpips = proxy->forward(g_out, y).mean();
  } else {
    torch::NoGradGuard guard;
    r.lpips = proxy->forward(g_out, y).mean();
  }
  r.total = w.adv * r.adv + w.l1 * r.l1 + w.lpips * r.lpips;
  return r;
}

DiscriminatorLoss discriminator_loss(const std::vector<torch::Tensor>& real_logits,
                                     const std::vector<torch::Tensor>& fake_logits) {
  require(!real_logits.empty() && real_logits.size() == fake_logits.size(),
          "discriminator loss: real and fake logit lists differ");
  DiscriminatorLoss r;
  r.real = torch::zeros({}, real_logits.front().options());
  r.fake = torch::zeros({}, real_logits.front().options());
  for (std::size_t s = 0; s < real_logits.size(); ++s) {
    r.real = r.real + F::softplus(-real_logits[s]).mean();
    r.fake = r.fake + F::softplus(fake_logits[s]).mean();
  }
  const double n = static_cast<double>(real_logits.size());
  r.real = r.real / n;
  r.fake = r.fake / n;
  r.total = r.real + r.fake;
  return r;
}

DiscriminatorLoss discriminator_loss(MultiscaleDiscriminator& d, const torch::Tensor& y, const torch::Tensor& g_out) {
  return discriminator_loss(d->forward(y), d->forward(g_out.detach()));
}

RestorationModel::RestorationModel(const RestoreConfig& cfg) : config(cfg) {
  cfg.validate();
  g = Generator(cfg.generator);
  d = MultiscaleDiscriminator(cfg.disc_scales, 3, cfg.disc_channels);
  nn::seeded_init(*g, mix64(cfg.seed ^ 0xC1), 1.0);
  g->zero_branches();
  nn::seeded_init(*d, mix64(cfg.seed ^ 0xC2), 1.0);
  proxy = metrics::PerceptualProxy();
}

void RestorationModel::to(torch::Dtype dtype) {
  g->to(dtype);
  d->to(dtype);
  proxy->to(dtype);
}

std::string RestorationModel::parameter_hash() const { return nn::parameter_hash(*g) + nn::parameter_hash(*d); }

void save_restoration(const std::filesystem::path& path, const RestorationModel& model) {
  nn::save_checkpoint(path, {{"kind", "restore"}, {"config", model.config.to_json()}},
                      {{"g", model.g.get()}, {"d", model.d.get()}});
}

RestorationModel load_restoration(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCategory::missing_artifact, "checkpoint not found: " + path.string());
  const json meta = nn::read_checkpoint_meta(path);
  require(meta.value("kind", "") == "restore", "checkpoint is not a restoration model", ErrorCategory::format_error);
  RestorationModel model(RestoreConfig::from_json(meta.at("config")));
  nn::load_checkpoint(path, {{"g", model.g.get()}, {"d", model.d.get()}});
  return model;
}

RestorationSet make_restoration_set(const std::vector<datasim::VRSample>& samples, double feather,
                                    const align::AlignmentModelSet* aligners, const std::string& eye_tag) {
  RestorationSet set;
  for (const auto& s : samples) {
    ImageBuffer eye_l = s.eye(landmarks::Eye::left, eye_tag);
    ImageBuffer eye_r = s.eye(landmarks::Eye::right, eye_tag);
    ImageBuffer lower = s.lower_face.image;
    if (aligners && eye_tag != "front") {
      eye_l = align::align(aligners->at(align::Slot::left_eye), eye_l);
      eye_r = align::align(aligners->at(align::Slot::right_eye), eye_r);
    }
    if (aligners && aligners->has(align::Slot::face) && s.lower_face.tag != "front")
      lower = align::align(aligners->at(align::Slot::face), lower);
    set.x.push_back(landmarks::paste_crops(s.dp_image, eye_l, eye_r, lower, s.landmarks, feather));
    set.z.push_back(s.dp_image);
    set.y.push_back(s.full_face);
    set.identity.push_back(s.identity_seed);
    set.landmarks.push_back(s.landmarks);
  }
  return set;
}

std::vector<ImageBuffer> generate(const RestorationModel& model, const std::vector<ImageBuffer>& x,
                                  const std::vector<ImageBuffer>& z) {
  require(x.size() == z.size(), "generate: x and z batches differ in size");
  if (x.empty()) return {};
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i].same_shape(z[i]), "generate: x and z differ in shape");
    require(x[i].channels() == 3, "generate: expected RGB images");
  }
  torch::NoGradGuard guard;
  const auto dtype = module_dtype(*model.g);
  const auto out = model.g.ptr()->forward(nn::to_batch(x, dtype), nn::to_batch(z, dtype));
  std::vector<ImageBuffer> result;
  for (std::int64_t i = 0; i < out.size(0); ++i) result.push_back(nn::to_image(out[i]));
  return result;
}

RestoreResult train_restoration(RestorationModel& model, const RestorationSet& data,
                                const std::filesystem::path& checkpoint_dir) {
  const auto& cfg = model.config;
  cfg.validate();
  require(data.size() > 0, "restoration training needs samples", ErrorCategory::invalid_config);
  require(data.z.size() == data.size() && data.y.size() == data.size() && data.identity.size() == data.size(),
          "restoration set fields differ in length");
  const auto dtype = module_dtype(*model.g);
  const auto all_x = nn::to_batch(data.x, dtype), all_z = nn::to_batch(data.z, dtype),
             all_y = nn::to_batch(data.y, dtype);
  require(all_x.sizes() == all_y.sizes() && all_z.sizes() == all_y.sizes(), "restoration set images differ in shape");
  require(all_x.size(2) == cfg.height && all_x.size(3) == cfg.width && all_x.size(1) == 3,
          "restoration images do not match the configured size", ErrorCategory::invalid_config);

  const std::size_t n = data.size();
  std::vector<std::vector<std::int64_t>> others(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (data.identity[j] != data.identity[i]) others[i].push_back(static_cast<std::int64_t>(j));

  torch::optim::Adam opt_g(model.g->parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.999}));
  torch::optim::Adam opt_d(model.d->parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.999}));
  Rng rng = make_rng(cfg.seed, 0x2E5);
  RestoreResult result;
  auto set_d_grad = [&](bool on) {
    for (auto& p : model.d->parameters()) p.set_requires_grad(on);
  };
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::int64_t> idx(cfg.batch), ref(cfg.batch);
    for (int k = 0; k < cfg.batch; ++k) {
      const auto i = static_cast<std::size_t>(rng() % n);
      idx[k] = static_cast<std::int64_t>(i);
      const bool swap = uniform(rng, 0.0, 1.0) < cfg.p_swap && !others[i].empty();
      ref[k] = swap ? others[i][rng() % others[i].size()] : idx[k];
    }
    const auto x = all_x.index_select(0, torch::tensor(idx));
    const auto y = all_y.index_select(0, torch::tensor(idx));
    const auto z = cfg.zero_reference ? torch::zeros_like(x) : all_z.index_select(0, torch::tensor(ref));

    torch::Tensor fake;
    {
      torch::NoGradGuard guard;
      fake = model.g->forward(x, z);
    }
    set_d_grad(true);
    opt_d.zero_grad();
    const auto dl = discriminator_loss(model.d, y, fake);
    dl.total.backward();
    opt_d.step();
    result.history.add(step, "D", dl.values());

    set_d_grad(false);
    opt_g.zero_grad();
    const auto out = model.g->forward(x, z);
    const auto gl = generator_loss(out, y, model.d->forward(out), cfg.weights, model.proxy, cfg.literal_adversarial);
    gl.total.backward();
    opt_g.step();
    result.history.add(step, "G", gl.values());

    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.ravck", step + 1);
      save_restoration(checkpoint_dir / name, model);
      result.checkpoints.push_back(checkpoint_dir / name);
    }
  }
  set_d_grad(true);
  return result;
}

ImageBuffer restore(const RestorationModel& model, const ImageBuffer& eye_left, const ImageBuffer& eye_right,
                    const ImageBuffer& lower, const ImageBuffer& dp, const landmarks::LandmarkSet& lm) {
  const auto x = landmarks::paste_crops(dp, eye_left, eye_right, lower, lm, model.config.feather);
  return generate(model, {x}, {dp}).front();
}

double eye_window_chroma(const ImageBuffer& img, const landmarks::LandmarkSet& lm, const ImageBuffer* gray_source) {
  require(img.channels() == 3, "chroma needs an RGB image");
  require(!gray_source || gray_source->same_shape(img), "chroma mask image differs in shape");
  auto chroma = [](const ImageBuffer& im, int y, int x) {
    const double m = (im.at(y, x, 0) + im.at(y, x, 1) + im.at(y, x, 2)) / 3.0;
    double v = 0.0;
    for (int c = 0; c < 3; ++c) v += (im.at(y, x, c) - m) * (im.at(y, x, c) - m);
    return v / 3.0;
  };
  double total = 0.0;
  int windows = 0;
  for (auto eye : {landmarks::Eye::left, landmarks::Eye::right}) {
    const auto w = landmarks::eye_window(lm, eye, img.height(), img.width());
    double sum = 0.0;
    int count = 0;
    for (int y = w.y0; y < w.y0 + w.height; ++y)
      for (int x = w.x0; x < w.x0 + w.width; ++x) {
        if (gray_source && chroma(*gray_source, y, x) > 1e-12) continue;
        sum += chroma(img, y, x);
        ++count;
      }
    if (count == 0) continue;
    total += sum / count;
    ++windows;
  }
  return windows > 0 ? total / windows : 0.0;
}

}  // namespace rav::restore2d
