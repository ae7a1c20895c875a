#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "rav/core/image.hpp"
#include "rav/landmarks/landmarks.hpp"

namespace rav::metrics {

inline constexpr double kDefaultPsnrCap = 100.0;
inline constexpr std::uint64_t kPerceptualSeed = 0x5EED1E5;

/// Gaussian-windowed SSIM (11 x 11, sigma 1.5, L = 1), mean over windows and channels.
double ssim(const ImageBuffer& a, const ImageBuffer& b);
/// SSIM with the window shrunk to the largest odd size that fits (small ROIs).
double ssim_fitted(const ImageBuffer& a, const ImageBuffer& b);
/// 10 log10(1 / MSE), capped for identical images.
double psnr(const ImageBuffer& a, const ImageBuffer& b, double cap = kDefaultPsnrCap);

/// Randomised perceptual proxy: a seed-fixed three-layer conv pyramid whose
/// per-pixel channel vectors are unit-normalised; the distance is the mean
/// squared feature difference of each layer, summed over layers.
class PerceptualProxyImpl : public torch::nn::Module {
 public:
  explicit PerceptualProxyImpl(std::uint64_t seed = kPerceptualSeed);
  /// a, b: [B, 1 or 3, H, W] in [0, 1]. Returns a [B] tensor of distances.
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);
  std::vector<torch::Tensor> features(const torch::Tensor& x);

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
};
TORCH_MODULE(PerceptualProxy);

/// Double-precision distance with the default-seeded proxy (frozen weights).
double perceptual(const ImageBuffer& a, const ImageBuffer& b, std::uint64_t seed = kPerceptualSeed);

struct MetricRow {
  std::string id;
  double ssim = 0.0;
  double psnr_db = 0.0;
  double perceptual = 0.0;
  double roi_ssim = 0.0;
  double roi_psnr_db = 0.0;
  double roi_perceptual = 0.0;
  std::optional<double> gaze_error_deg;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;  // aggregate over rows (id "mean")
  std::vector<std::string> errors;
  nlohmann::json config;

  nlohmann::json to_json() const;
  std::string to_csv() const;
  /// Writes report.json and report.csv into `dir`.
  void write(const std::filesystem::path& dir) const;
};

struct EvalConfig {
  double psnr_cap = kDefaultPsnrCap;
  bool gaze = true;  // gaze error on the eye windows when an iris is detectable
};

/// Metrics of one prediction/truth pair; the ROI is the landmark eye band.
MetricRow evaluate_pair(const std::string& id, const ImageBuffer& pred, const ImageBuffer& truth,
                        const landmarks::LandmarkSet& lm, const EvalConfig& cfg = {});
/// Mean of each column; gaze averaged over rows that have it.
MetricRow aggregate(const std::vector<MetricRow>& rows);

enum class LandmarkMode { oracle, detector };

/// Pairs `<pred_dir>/<id>.png` with the manifest's full-face images. Missing or
/// unreadable predictions are listed in `errors` and excluded from the mean.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& manifest,
                              LandmarkMode lm_source = LandmarkMode::oracle,
                              const landmarks::LandmarkDetector* detector = nullptr, const EvalConfig& cfg = {});

}  // namespace rav::metrics
