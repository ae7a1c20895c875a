#include "rav/nn/common.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstring>

#include "rav/core/archive.hpp"
#include "rav/core/error.hpp"
#include "rav/core/io.hpp"

namespace rav::nn {
namespace {

constexpr const char* kMagic = "RAVCK1";

at::Generator generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor orthogonal(torch::IntArrayRef shape, at::Generator& gen, double gain) {
  const std::int64_t rows = shape[0];
  std::int64_t cols = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) cols *= shape[i];
  auto flat = torch::randn({rows, cols}, gen, torch::kFloat64);
  const bool tall = rows >= cols;
  auto [q, r] = torch::linalg_qr(tall ? flat : flat.t());
  q = q * torch::sign(torch::diagonal(r)).unsqueeze(0);
  if (!tall) q = q.t();
  return (gain * q).reshape(shape);
}

template <typename F>
void for_each_tensor(const torch::nn::Module& module, F&& f) {
  for (const auto& p : module.named_parameters(true)) f(p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) f(b.key(), b.value());
}

}  // namespace

torch::Tensor to_tensor(const ImageBuffer& img, torch::Dtype dtype) {
  auto t = torch::empty({img.height(), img.width(), img.channels()}, torch::kFloat64);
  std::memcpy(t.data_ptr<double>(), img.data().data(), img.size() * sizeof(double));
  return t.permute({2, 0, 1}).contiguous().to(dtype);
}

torch::Tensor to_batch(const std::vector<ImageBuffer>& imgs, torch::Dtype dtype) {
  require(!imgs.empty(), "cannot batch zero images");
  std::vector<torch::Tensor> ts;
  ts.reserve(imgs.size());
  for (const auto& img : imgs) {
    require(img.same_shape(imgs.front()), "batched images must share a shape");
    ts.push_back(to_tensor(img, dtype));
  }
  return torch::stack(ts);
}

ImageBuffer to_image(const torch::Tensor& t) {
  auto x = t.detach();
  if (x.dim() == 4) {
    require(x.size(0) == 1, "to_image expects a single image");
    x = x[0];
  }
  require(x.dim() == 3, "to_image expects a [C, H, W] tensor");
  x = x.to(torch::kFloat64).permute({1, 2, 0}).contiguous();
  ImageBuffer img(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)), static_cast<int>(x.size(2)));
  std::memcpy(img.data().data(), x.data_ptr<double>(), img.size() * sizeof(double));
  return img;
}

void seeded_init(torch::nn::Module& module, std::uint64_t seed, double gain) {
  torch::NoGradGuard guard;
  auto gen = generator(seed);
  for (auto& p : module.named_parameters(true)) {
    auto& t = p.value();
    const bool norm_scale = p.key().find("norm") != std::string::npos && p.key().ends_with("weight");
    if (t.dim() >= 2)
      t.copy_(orthogonal(t.sizes(), gen, gain));
    else if (norm_scale)
      t.fill_(1.0);
    else
      t.zero_();
  }
}

void zero_parameters(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& p : module.parameters(true)) p.zero_();
}

void seeded_normal(torch::nn::Module& module, std::uint64_t seed, double std) {
  torch::NoGradGuard guard;
  auto gen = generator(seed);
  for (auto& p : module.parameters(true)) p.copy_(std * torch::randn(p.sizes(), gen, torch::kFloat64));
}

torch::Tensor normal_tensor(torch::IntArrayRef shape, std::uint64_t seed, double std, torch::Dtype dtype) {
  auto gen = generator(seed);
  return (std * torch::randn(shape, gen, torch::kFloat64)).to(dtype);
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters(true)) out.push_back(p.detach().clone());
  return out;
}

bool bit_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].sizes().equals(b[i].sizes()) || a[i].dtype() != b[i].dtype()) return false;
    const auto x = a[i].contiguous(), y = b[i].contiguous();
    if (std::memcmp(x.data_ptr(), y.data_ptr(), x.nbytes()) != 0) return false;
  }
  return true;
}

std::string parameter_hash(const torch::nn::Module& module) {
  std::string blob;
  for_each_tensor(module, [&](const std::string& name, const torch::Tensor& t) {
    blob += name;
    for (auto d : t.sizes()) blob += ":" + std::to_string(d);
    const auto f = t.detach().to(torch::kFloat32).contiguous();
    blob.append(static_cast<const char*>(f.data_ptr()), f.nbytes());
  });
  return sha256_hex(blob);
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::map<std::string, const torch::nn::Module*>& modules) {
  Archive ar;
  ar.magic = kMagic;
  ar.header = {static_cast<std::uint32_t>(modules.size())};
  const std::string text = meta.dump();
  NamedArray m;
  m.name = "meta.json";
  m.dtype = NamedArray::DType::i32;
  m.shape = {static_cast<std::int64_t>(text.size())};
  m.i32.assign(text.begin(), text.end());
  ar.arrays.push_back(std::move(m));
  for (const auto& [prefix, module] : modules)
    for_each_tensor(*module, [&](const std::string& name, const torch::Tensor& t) {
      NamedArray a;
      a.name = prefix + "/" + name;
      a.shape.assign(t.sizes().begin(), t.sizes().end());
      const auto f = t.detach().to(torch::kFloat32).contiguous();
      a.f32.assign(f.data_ptr<float>(), f.data_ptr<float>() + f.numel());
      ar.arrays.push_back(std::move(a));
    });
  write_archive(path, ar);
}

namespace {
nlohmann::json parse_meta(const Archive& ar) {
  const auto& m = ar.get("meta.json");
  require(m.dtype == NamedArray::DType::i32, "checkpoint metadata has the wrong type", ErrorCategory::format_error);
  const std::string text(m.i32.begin(), m.i32.end());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::format_error, std::string("invalid checkpoint metadata: ") + e.what());
  }
}
}  // namespace

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) { return parse_meta(read_archive(path, kMagic)); }

nlohmann::json load_checkpoint(const std::filesystem::path& path,
                               const std::map<std::string, torch::nn::Module*>& modules) {
  const Archive ar = read_archive(path, kMagic);
  torch::NoGradGuard guard;
  for (const auto& [prefix, module] : modules) {
    auto load = [&](const std::string& name, torch::Tensor t) {
      const NamedArray* a = ar.find(prefix + "/" + name);
      if (a == nullptr) throw Error(ErrorCategory::format_error, "checkpoint lacks '" + prefix + "/" + name + "'");
      const std::vector<std::int64_t> want(t.sizes().begin(), t.sizes().end());
      if (a->dtype != NamedArray::DType::f32 || a->shape != want)
        throw Error(ErrorCategory::format_error, "checkpoint array '" + a->name + "' has the wrong shape");
      auto src = torch::from_blob(const_cast<float*>(a->f32.data()), t.sizes(), torch::kFloat32);
      t.copy_(src.to(t.dtype()));
    };
    for (auto& p : module->named_parameters(true)) load(p.key(), p.value());
    for (auto& b : module->named_buffers(true)) load(b.key(), b.value());
  }
  return parse_meta(ar);
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace rav::nn
