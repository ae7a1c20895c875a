#include "rav/metrics/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>

#include "rav/align/gaze.hpp"
#include "rav/core/error.hpp"
#include "rav/core/io.hpp"
#include "rav/core/random.hpp"
#include "rav/kernels/ssim.hpp"
#include "rav/nn/common.hpp"

namespace rav::metrics {
namespace {

using nlohmann::json;

torch::Tensor unit_channels(const torch::Tensor& f) {
  return f / torch::sqrt((f * f).sum(1, true) + 1e-10);
}

torch::Tensor as_rgb(const torch::Tensor& x) { return x.size(1) == 1 ? x.expand({-1, 3, -1, -1}) : x; }

json row_json(const MetricRow& r) {
  json j = {{"id", r.id},           {"ssim", r.ssim},         {"psnr_db", r.psnr_db},
            {"perceptual", r.perceptual}, {"roi_ssim", r.roi_ssim}, {"roi_psnr_db", r.roi_psnr_db},
            {"roi_perceptual", r.roi_perceptual}};
  j["gaze_error_deg"] = r.gaze_error_deg ? json(*r.gaze_error_deg) : json(nullptr);
  return j;
}

}  // namespace

double ssim(const ImageBuffer& a, const ImageBuffer& b) { return kernels::ssim(a, b); }

double ssim_fitted(const ImageBuffer& a, const ImageBuffer& b) {
  kernels::SsimParams p;
  const int fit = std::min({p.window, a.height(), a.width()});
  p.window = fit % 2 == 1 ? fit : fit - 1;
  require(p.window >= 1, "ssim: empty image");
  return kernels::ssim(a, b, p);
}

double psnr(const ImageBuffer& a, const ImageBuffer& b, double cap) {
  require(a.same_shape(b), "psnr: images differ in shape");
  require(!a.empty(), "psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return cap;
  return std::min(cap, -10.0 * std::log10(mse));
}

PerceptualProxyImpl::PerceptualProxyImpl(std::uint64_t seed) {
  c1_ = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 16, 3).padding(1)));
  c2_ = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(16, 32, 3).stride(2).padding(1)));
  c3_ = register_module("c3", torch::nn::Conv2d(torch::nn::Conv2dOptions(32, 32, 3).stride(2).padding(1)));
  torch::NoGradGuard guard;
  std::uint64_t s = seed;
  for (auto* conv : {&c1_, &c2_, &c3_}) {
    auto& w = (*conv)->weight;
    const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
    w.copy_(nn::normal_tensor(w.sizes(), s = mix64(s), std::sqrt(2.0 / fan_in)));
    (*conv)->bias.zero_();
    w.set_requires_grad(false);
    (*conv)->bias.set_requires_grad(false);
  }
}

std::vector<torch::Tensor> PerceptualProxyImpl::features(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = torch::relu(c1_(2.0 * as_rgb(x) - 1.0));
  out.push_back(h);
  h = torch::relu(c2_(h));
  out.push_back(h);
  h = torch::relu(c3_(h));
  out.push_back(h);
  return out;
}

torch::Tensor PerceptualProxyImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
  require(a.sizes() == b.sizes(), "perceptual: inputs differ in shape");
  require(a.dim() == 4, "perceptual: expected [B, C, H, W] inputs");
  const auto fa = features(a), fb = features(b);
  auto total = torch::zeros({a.size(0)}, a.options());
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const auto d = unit_channels(fa[l]) - unit_channels(fb[l]);
    total = total + (d * d).mean({1, 2, 3});
  }
  return total;
}

double perceptual(const ImageBuffer& a, const ImageBuffer& b, std::uint64_t seed) {
  require(a.same_shape(b), "perceptual: images differ in shape");
  static std::mutex mu;
  static std::map<std::uint64_t, PerceptualProxy> cache;
  PerceptualProxy proxy{nullptr};
  {
    std::lock_guard lock(mu);
    auto it = cache.find(seed);
    if (it == cache.end()) {
      PerceptualProxy p(seed);
      p->to(torch::kFloat64);
      it = cache.emplace(seed, p).first;
    }
    proxy = it->second;
  }
  torch::NoGradGuard guard;
  const auto ta = nn::to_tensor(a, torch::kFloat64).unsqueeze(0);
  const auto tb = nn::to_tensor(b, torch::kFloat64).unsqueeze(0);
  return proxy->forward(ta, tb).item<double>();
}

MetricRow evaluate_pair(const std::string& id, const ImageBuffer& pred, const ImageBuffer& truth,
                        const landmarks::LandmarkSet& lm, const EvalConfig& cfg) {
  require(pred.same_shape(truth), "prediction " + id + " does not match the ground-truth shape");
  MetricRow r;
  r.id = id;
  r.ssim = ssim(pred, truth);
  r.psnr_db = psnr(pred, truth, cfg.psnr_cap);
  r.perceptual = perceptual(pred, truth);
  const auto roi_p = landmarks::crop_eye_region(pred, lm), roi_t = landmarks::crop_eye_region(truth, lm);
  r.roi_ssim = ssim_fitted(roi_p, roi_t);
  r.roi_psnr_db = psnr(roi_p, roi_t, cfg.psnr_cap);
  r.roi_perceptual = perceptual(roi_p, roi_t);
  if (cfg.gaze) {
    try {
      double sum = 0.0;
      for (auto eye : {landmarks::Eye::left, landmarks::Eye::right})
        sum += align::gaze_error(pred, truth, align::eye_corners(lm, eye));
      r.gaze_error_deg = 0.5 * sum;
    } catch (const Error& e) {
      if (e.category() != ErrorCategory::not_detectable) throw;
    }
  }
  return r;
}

MetricRow aggregate(const std::vector<MetricRow>& rows) {
  MetricRow m;
  m.id = "mean";
  if (rows.empty()) return m;
  double gaze = 0.0;
  int ngaze = 0;
  for (const auto& r : rows) {
    m.ssim += r.ssim;
    m.psnr_db += r.psnr_db;
    m.perceptual += r.perceptual;
    m.roi_ssim += r.roi_ssim;
    m.roi_psnr_db += r.roi_psnr_db;
    m.roi_perceptual += r.roi_perceptual;
    if (r.gaze_error_deg) {
      gaze += *r.gaze_error_deg;
      ++ngaze;
    }
  }
  const double n = static_cast<double>(rows.size());
  for (double* v : {&m.ssim, &m.psnr_db, &m.perceptual, &m.roi_ssim, &m.roi_psnr_db, &m.roi_perceptual}) *v /= n;
  if (ngaze > 0) m.gaze_error_deg = gaze / ngaze;
  return m;
}

json MetricReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) rows_j.push_back(row_json(r));
  return {{"schema", "rav-metrics/1"}, {"count", rows.size()}, {"mean", row_json(mean)},
          {"rows", rows_j},            {"errors", errors},     {"config", config}};
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "id,ssim,psnr_db,perceptual,roi_ssim,roi_psnr_db,roi_perceptual,gaze_error_deg\n";
  auto line = [&](const MetricRow& r) {
    out << r.id << ',' << r.ssim << ',' << r.psnr_db << ',' << r.perceptual << ',' << r.roi_ssim << ','
        << r.roi_psnr_db << ',' << r.roi_perceptual << ',';
    if (r.gaze_error_deg) out << *r.gaze_error_deg;
    out << '\n';
  };
  for (const auto& r : rows) line(r);
  line(mean);
  return out.str();
}

void MetricReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", to_json().dump(2) + "\n");
  write_text(dir / "report.csv", to_csv());
}

MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& manifest_path,
                              LandmarkMode lm_source, const landmarks::LandmarkDetector* detector,
                              const EvalConfig& cfg) {
  if (!std::filesystem::exists(manifest_path))
    throw Error(ErrorCategory::missing_artifact, "dataset manifest not found: " + manifest_path.string());
  if (!std::filesystem::is_directory(pred_dir))
    throw Error(ErrorCategory::missing_artifact, "prediction folder not found: " + pred_dir.string());
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::format_error, std::string("invalid manifest: ") + e.what());
  }
  const auto root = manifest_path.parent_path();
  MetricReport report;
  report.config = {{"psnr_cap", cfg.psnr_cap},
                   {"ssim", {{"window", 11}, {"sigma", 1.5}, {"k1", 0.01}, {"k2", 0.03}, {"L", 1.0}}},
                   {"perceptual", {{"kind", "random-conv-proxy"}, {"seed", kPerceptualSeed}}},
                   {"roi", {{"kind", "eye-band"},
                            {"eye_window_fraction_of_face_width", landmarks::CropGeometry{}.eye_fraction},
                            {"face_width_per_outer_corner_span", landmarks::CropGeometry{}.face_width_per_corner_span}}},
                   {"landmarks", lm_source == LandmarkMode::oracle ? "oracle" : "detector"},
                   {"manifest", manifest_path.generic_string()}};
  for (const auto& s : m.at("samples")) {
    const std::string id = s.at("id");
    const auto pred_path = pred_dir / (id + ".png");
    if (!std::filesystem::exists(pred_path)) {
      report.errors.push_back(id + ": missing prediction " + pred_path.filename().string());
      continue;
    }
    try {
      const ImageBuffer truth = read_png(root / s.at("full").at("path").get<std::string>());
      ImageBuffer pred = read_png(pred_path);
      if (pred.channels() == 1) pred = replicate_channels(pred, 3);
      std::optional<landmarks::LandmarkSet> oracle;
      if (lm_source == LandmarkMode::oracle) {
        landmarks::LandmarkSet lm;
        for (const auto& [name, p] : s.at("landmarks").items()) lm.points[name] = {p[0], p[1]};
        oracle = lm;
      }
      const auto lm = landmarks::get_landmarks(truth, oracle, detector);
      report.rows.push_back(evaluate_pair(id, pred, truth, lm, cfg));
    } catch (const Error& e) {
      if (e.category() == ErrorCategory::not_detectable) throw;
      report.errors.push_back(id + ": " + e.what());
    }
  }
  report.mean = aggregate(report.rows);
  return report;
}

}  // namespace rav::metrics
