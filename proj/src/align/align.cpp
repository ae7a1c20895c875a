#include "rav/align/align.hpp"

#include <cmath>

#include "rav/core/error.hpp"
#include "rav/core/random.hpp"
#include "rav/nn/common.hpp"
#include "rav/nn/layers.hpp"

namespace rav::align {
namespace {

using nlohmann::json;

/// Residual mixing across the flattened bottleneck positions, per channel.
class MixerImpl : public torch::nn::Module {
 public:
  explicit MixerImpl(int positions) { fc_ = register_module("fc", torch::nn::Linear(positions, positions)); }
  torch::Tensor forward(const torch::Tensor& x) {
    const auto s = x.sizes();
    auto flat = x.reshape({s[0], s[1], s[2] * s[3]});
    return x + fc_(flat).reshape(s);
  }

 private:
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(Mixer);

torch::Tensor lsgan(const torch::Tensor& logits, double target) { return (logits - target).pow(2).mean(); }

std::vector<torch::Tensor> cat_params(std::initializer_list<const torch::nn::Module*> ms) {
  std::vector<torch::Tensor> out;
  for (const auto* m : ms)
    for (const auto& p : m->parameters()) out.push_back(p);
  return out;
}

torch::Dtype module_dtype(const torch::nn::Module& m) { return m.parameters().front().scalar_type(); }

}  // namespace

std::string slot_name(Slot s) {
  switch (s) {
    case Slot::left_eye: return "CG_LE";
    case Slot::right_eye: return "CG_RE";
    case Slot::face: return "CG_Face";
  }
  return "?";
}

Slot parse_slot(const std::string& name) {
  if (name == "CG_LE" || name == "LE" || name == "left_eye") return Slot::left_eye;
  if (name == "CG_RE" || name == "RE" || name == "right_eye") return Slot::right_eye;
  if (name == "CG_Face" || name == "Face" || name == "face") return Slot::face;
  throw Error(ErrorCategory::invalid_config, "unknown alignment slot '" + name + "'");
}

void AlignConfig::validate() const {
  auto cfg = [](bool ok, const std::string& m) { require(ok, m, ErrorCategory::invalid_config); };
  cfg(height >= 8 && width >= 8 && height % 4 == 0 && width % 4 == 0, "align crop size must be >= 8 and divisible by 4");
  cfg(channels == 1 || channels == 3, "align channels must be 1 or 3");
  cfg(base_channels >= 1 && res_blocks >= 0, "align base_channels must be >= 1 and res_blocks >= 0");
  for (double v : {lambda_adv, lambda_cyc, lambda_id, lambda_paired, head_init_std})
    cfg(std::isfinite(v) && v >= 0.0, "align loss weights must be finite and >= 0");
  cfg(lr > 0.0 && std::isfinite(lr), "align lr must be positive");
  cfg(steps >= 0 && batch >= 1 && checkpoint_every >= 0, "align steps/batch/checkpoint_every out of range");
}

json AlignConfig::to_json() const {
  return {{"height", height},
          {"width", width},
          {"channels", channels},
          {"base_channels", base_channels},
          {"res_blocks", res_blocks},
          {"architecture", architecture == Architecture::cyclegan ? "cyclegan" : "autoencoder"},
          {"head_init", head_init == HeadInit::identity ? "identity" : "random"},
          {"head_init_std", head_init_std},
          {"lambda_adv", lambda_adv},
          {"lambda_cyc", lambda_cyc},
          {"lambda_id", lambda_id},
          {"lambda_paired", lambda_paired},
          {"lr", lr},
          {"steps", steps},
          {"batch", batch},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed}};
}

AlignConfig AlignConfig::from_json(const json& j) {
  AlignConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.channels = j.value("channels", c.channels);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.res_blocks = j.value("res_blocks", c.res_blocks);
    const std::string arch = j.value("architecture", std::string("cyclegan"));
    require(arch == "cyclegan" || arch == "autoencoder", "architecture must be cyclegan or autoencoder",
            ErrorCategory::invalid_config);
    c.architecture = arch == "cyclegan" ? Architecture::cyclegan : Architecture::autoencoder;
    const std::string init = j.value("head_init", std::string("identity"));
    require(init == "identity" || init == "random", "head_init must be identity or random",
            ErrorCategory::invalid_config);
    c.head_init = init == "identity" ? HeadInit::identity : HeadInit::random;
    c.head_init_std = j.value("head_init_std", c.head_init_std);
    c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
    c.lambda_cyc = j.value("lambda_cyc", c.lambda_cyc);
    c.lambda_id = j.value("lambda_id", c.lambda_id);
    c.lambda_paired = j.value("lambda_paired", c.lambda_paired);
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::invalid_config, std::string("bad align config: ") + e.what());
  }
  c.validate();
  return c;
}

GeneratorImpl::GeneratorImpl(const AlignConfig& cfg) {
  const int c = cfg.base_channels;
  in_ = register_module("in", nn::conv(cfg.channels, c, 3));
  down1_ = register_module("down1", nn::conv(c, 2 * c, 4, 2, 1));
  down2_ = register_module("down2", nn::conv(2 * c, 4 * c, 4, 2, 1));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  mixers_ = register_module("mixers", torch::nn::ModuleList());
  const int positions = (cfg.height / 4) * (cfg.width / 4);
  for (int i = 0; i < cfg.res_blocks; ++i) {
    blocks_->push_back(nn::ResBlock(4 * c));
    mixers_->push_back(Mixer(positions));
  }
  up1_ = register_module("up1", nn::conv(4 * c, 2 * c, 3));
  up2_ = register_module("up2", nn::conv(2 * c, c, 3));
  head_ = register_module("head", nn::conv(c, cfg.channels, 3));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(in_(x));
  h = torch::relu(down1_(h));
  h = torch::relu(down2_(h));
  for (std::size_t i = 0; i < blocks_->size(); ++i) {
    h = blocks_[i]->as<nn::ResBlock>()->forward(h);
    h = mixers_[i]->as<Mixer>()->forward(h);
  }
  h = torch::relu(up1_(nn::upsample2(h)));
  h = torch::relu(up2_(nn::upsample2(h)));
  return x + head_(h);
}

void GeneratorImpl::zero_residual_branches() {
  for (auto& b : *blocks_) b->as<nn::ResBlock>()->zero_branch();
  for (auto& m : *mixers_) nn::zero_parameters(*m);
}

AlignmentModel::AlignmentModel(const AlignConfig& cfg) : config(cfg) {
  cfg.validate();
  g_ab = Generator(cfg);
  g_ba = Generator(cfg);
  d_a = PatchDiscriminator(cfg.channels, cfg.base_channels);
  d_b = PatchDiscriminator(cfg.channels, cfg.base_channels);
  const std::uint64_t s = cfg.seed;
  nn::seeded_init(*g_ab, mix64(s ^ 0xA1), 1.0);
  nn::seeded_init(*g_ba, mix64(s ^ 0xA2), 1.0);
  g_ab->zero_residual_branches();
  g_ba->zero_residual_branches();
  nn::seeded_init(*d_a, mix64(s ^ 0xA3), 1.0);
  nn::seeded_init(*d_b, mix64(s ^ 0xA4), 1.0);
  for (auto* g : {&g_ab, &g_ba}) {
    if (cfg.head_init == HeadInit::identity)
      nn::zero_parameters(*(*g)->head());
    else
      nn::seeded_normal(*(*g)->head(), mix64(s ^ (g == &g_ab ? 0xB1 : 0xB2)), cfg.head_init_std);
  }
}

std::vector<torch::Tensor> AlignmentModel::generator_parameters() const { return cat_params({g_ab.get(), g_ba.get()}); }
std::vector<torch::Tensor> AlignmentModel::discriminator_parameters() const {
  return cat_params({d_a.get(), d_b.get()});
}

std::string AlignmentModel::parameter_hash() const {
  return nn::parameter_hash(*g_ab) + nn::parameter_hash(*g_ba) + nn::parameter_hash(*d_a) + nn::parameter_hash(*d_b);
}

void AlignmentModel::to(torch::Dtype dtype) {
  g_ab->to(dtype);
  g_ba->to(dtype);
  d_a->to(dtype);
  d_b->to(dtype);
}

AlignmentModel& AlignmentModelSet::at(Slot s) {
  auto it = slots.find(s);
  if (it == slots.end()) throw Error(ErrorCategory::missing_artifact, "alignment slot " + slot_name(s) + " not trained");
  return it->second;
}
const AlignmentModel& AlignmentModelSet::at(Slot s) const { return const_cast<AlignmentModelSet*>(this)->at(s); }

void save_alignment(const std::filesystem::path& path, const AlignmentModelSet& set) {
  json meta = {{"kind", "align"}, {"slots", json::object()}};
  std::map<std::string, const torch::nn::Module*> modules;
  for (const auto& [slot, m] : set.slots) {
    const std::string n = slot_name(slot);
    meta["slots"][n] = m.config.to_json();
    modules[n + "/g_ab"] = m.g_ab.get();
    modules[n + "/g_ba"] = m.g_ba.get();
    modules[n + "/d_a"] = m.d_a.get();
    modules[n + "/d_b"] = m.d_b.get();
  }
  nn::save_checkpoint(path, meta, modules);
}

AlignmentModelSet load_alignment(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCategory::missing_artifact, "checkpoint not found: " + path.string());
  const json meta = nn::read_checkpoint_meta(path);
  require(meta.value("kind", "") == "align", "checkpoint is not an alignment model", ErrorCategory::format_error);
  AlignmentModelSet set;
  std::map<std::string, torch::nn::Module*> modules;
  for (const auto& [name, cfg] : meta.at("slots").items()) set.slots.emplace(parse_slot(name), AlignConfig::from_json(cfg));
  for (auto& [slot, m] : set.slots) {
    const std::string n = slot_name(slot);
    modules[n + "/g_ab"] = m.g_ab.get();
    modules[n + "/g_ba"] = m.g_ba.get();
    modules[n + "/d_a"] = m.d_a.get();
    modules[n + "/d_b"] = m.d_b.get();
  }
  nn::load_checkpoint(path, modules);
  return set;
}

std::vector<ImageBuffer> align(const AlignmentModel& model, const std::vector<ImageBuffer>& crops) {
  if (crops.empty()) return {};
  const auto& cfg = model.config;
  for (const auto& c : crops)
    require(c.height() == cfg.height && c.width() == cfg.width && c.channels() == cfg.channels,
            "crop shape does not match the alignment model (" + std::to_string(cfg.height) + "x" +
                std::to_string(cfg.width) + "x" + std::to_string(cfg.channels) + ")");
  torch::NoGradGuard guard;
  const auto out = model.g_ab.ptr()->forward(nn::to_batch(crops, module_dtype(*model.g_ab))).clamp(0.0, 1.0);
  std::vector<ImageBuffer> result;
  for (std::int64_t i = 0; i < out.size(0); ++i) result.push_back(nn::to_image(out[i]));
  return result;
}

ImageBuffer align(const AlignmentModel& model, const ImageBuffer& crop) { return align(model, std::vector{crop}).front(); }

std::map<std::string, double> LossRecord::values() const {
  return {{"adv_a", adv_a.item<double>()},       {"adv_b", adv_b.item<double>()},
          {"cyc", cyc.item<double>()},           {"identity", identity.item<double>()},
          {"paired", paired.item<double>()},     {"total", total.item<double>()}};
}

LossRecord cycle_losses(AlignmentModel& model, const torch::Tensor& a, const torch::Tensor& b, bool paired) {
  require(a.dim() == 4 && b.dim() == 4 && a.sizes().slice(1) == b.sizes().slice(1), "domain batches differ in shape");
  const auto& cfg = model.config;
  const auto fake_b = model.g_ab->forward(a);
  const auto fake_a = model.g_ba->forward(b);
  LossRecord r;
  r.adv_b = lsgan(model.d_b->forward(fake_b), 1.0);
  r.adv_a = lsgan(model.d_a->forward(fake_a), 1.0);
  r.cyc = nn::l1(model.g_ba->forward(fake_b), a) + nn::l1(model.g_ab->forward(fake_a), b);
  r.identity = nn::l1(model.g_ab->forward(b), b) + nn::l1(model.g_ba->forward(a), a);
  if (paired) {
    require(a.size(0) == b.size(0), "paired batches must have the same size");
    r.paired = nn::l1(fake_b, b) + nn::l1(fake_a, a);
  } else {
    r.paired = torch::zeros({}, a.options());
  }
  r.total = cfg.lambda_adv * (r.adv_a + r.adv_b) + cfg.lambda_cyc * r.cyc + cfg.lambda_id * r.identity +
            cfg.lambda_paired * r.paired;
  return r;
}

torch::Tensor discriminator_losses(AlignmentModel& model, const torch::Tensor& a, const torch::Tensor& b,
                                   const torch::Tensor& fake_a, const torch::Tensor& fake_b) {
  const auto la = lsgan(model.d_a->forward(a), 1.0) + lsgan(model.d_a->forward(fake_a.detach()), 0.0);
  const auto lb = lsgan(model.d_b->forward(b), 1.0) + lsgan(model.d_b->forward(fake_b.detach()), 0.0);
  return 0.5 * (la + lb);
}

torch::Tensor autoencoder_loss(AlignmentModel& model, const torch::Tensor& a, const torch::Tensor& b) {
  return nn::l1(model.g_ab->forward(a), b);
}

AlignResult train_alignment(AlignmentModel& model, const AlignData& data, const std::filesystem::path& checkpoint_dir,
                            Slot slot) {
  const auto& cfg = model.config;
  cfg.validate();
  require(!data.a.empty() && !data.b.empty(), "alignment training needs crops in both domains",
          ErrorCategory::invalid_config);
  require(!data.paired || data.a.size() == data.b.size(), "paired alignment data must have equal sizes");
  const bool ae = cfg.architecture == Architecture::autoencoder;
  require(!ae || data.paired, "the autoencoder variant needs paired data", ErrorCategory::invalid_config);
  const auto dtype = module_dtype(*model.g_ab);
  const auto all_a = nn::to_batch(data.a, dtype), all_b = nn::to_batch(data.b, dtype);
  require(all_a.size(2) == cfg.height && all_a.size(3) == cfg.width && all_a.size(1) == cfg.channels,
          "alignment crops do not match the configured shape", ErrorCategory::invalid_config);

  torch::optim::Adam opt_g(model.generator_parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.999}));
  torch::optim::Adam opt_d(model.discriminator_parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.999}));
  Rng rng = make_rng(cfg.seed, 0xA11);
  AlignResult result;
  const std::int64_t na = all_a.size(0), nb = all_b.size(0);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::int64_t> ia(cfg.batch), ib(cfg.batch);
    for (int k = 0; k < cfg.batch; ++k) {
      ia[k] = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(na));
      ib[k] = data.paired ? ia[k] : static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(nb));
    }
    const auto a = all_a.index_select(0, torch::tensor(ia));
    const auto b = all_b.index_select(0, torch::tensor(ib));
    std::map<std::string, double> row;
    if (ae) {
      opt_g.zero_grad();
      const auto loss = autoencoder_loss(model, a, b);
      loss.backward();
      opt_g.step();
      row = {{"paired", loss.item<double>()}, {"total", loss.item<double>()}};
    } else {
      opt_g.zero_grad();
      const auto rec = cycle_losses(model, a, b, data.paired);
      rec.total.backward();
      opt_g.step();
      row = rec.values();
      torch::Tensor fake_a, fake_b;
      {
        torch::NoGradGuard guard;
        fake_b = model.g_ab->forward(a);
        fake_a = model.g_ba->forward(b);
      }
      opt_d.zero_grad();
      const auto ld = discriminator_losses(model, a, b, fake_a, fake_b);
      ld.backward();
      opt_d.step();
      row["d_loss"] = ld.item<double>();
    }
    result.history.add(step, "train", row);
    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.ravck", step + 1);
      AlignmentModelSet one;
      one.slots.emplace(slot, model);
      save_alignment(checkpoint_dir / name, one);
      result.checkpoints.push_back(checkpoint_dir / name);
    }
  }
  return result;
}

AlignData slot_data(const std::vector<datasim::VRSample>& samples, Slot slot) {
  AlignData d;
  if (slot == Slot::face) {
    for (const auto& s : samples) (s.lower_face.tag == "front" ? d.b : d.a).push_back(s.lower_face.image);
    d.paired = false;
    return d;
  }
  const auto eye = slot == Slot::left_eye ? landmarks::Eye::left : landmarks::Eye::right;
  for (const auto& s : samples) {
    const ImageBuffer& front = s.eye(eye, "front");
    for (const auto& c : eye == landmarks::Eye::left ? s.eye_left : s.eye_right)
      if (c.tag != "front") {
        d.a.push_back(c.image);
        d.b.push_back(front);
      }
  }
  d.paired = true;
  return d;
}

ImageBuffer rotate90(const ImageBuffer& img) {
  ImageBuffer out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(img.width() - 1 - x, y, c) = img.at(y, x, c);
  return out;
}

ToyRotationSet make_rotation_toy_set(int n, int size, std::uint64_t seed) {
  require(n >= 1, "toy set needs at least one sample");
  ToyRotationSet t;
  Rng rng = make_rng(seed, 0x707);
  for (int i = 0; i < n; ++i) {
    const Gaze g{uniform(rng, -15.0, 15.0), uniform(rng, -10.0, 10.0)};
    const ImageBuffer b = render_eye(size, g, &t.corners);
    t.data.b.push_back(b);
    t.data.a.push_back(rotate90(b));
    t.gaze.push_back(g);
  }
  t.data.paired = true;
  return t;
}

}  // namespace rav::align
