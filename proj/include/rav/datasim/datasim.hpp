#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rav/core/image.hpp"
#include "rav/core/random.hpp"
#include "rav/landmarks/landmarks.hpp"
#include "rav/morphable/model.hpp"
#include "rav/morphable/render.hpp"

namespace rav::datasim {

/// Headset-camera degradation. A mask_margin of 0 disables the circular
/// field-of-view mask; a positive margin masks outside radius half-width - margin.
struct DegradationConfig {
  double radial_k1 = 0.0;
  double radial_k2 = 0.0;
  double vignette_strength = 0.0;
  double blur_sigma = 0.0;
  bool grayscale = false;
  double noise_sigma = 0.0;
  double eyebrow_occlusion_fraction = 0.0;
  int mask_margin = 0;
  bool lighting_shift = false;  // global gain in [0.7, 1.3] and offset in [-0.1, 0.1]

  static DegradationConfig neutral() { return {}; }
  static DegradationConfig headset();
  void validate() const;
};

ImageBuffer apply_radial_distortion(const ImageBuffer& img, double k1, double k2);
ImageBuffer apply_vignette(const ImageBuffer& img, double strength);

/// distort -> vignette -> blur -> noise -> lighting shift -> grayscale ->
/// field-of-view mask -> clamp. Deterministic given the generator state.
ImageBuffer degrade(const ImageBuffer& img, const DegradationConfig& cfg, Rng& rng);

inline constexpr std::array<const char*, 8> kExpressionTags{"anger", "contempt", "disgust", "fear",
                                                            "happy", "neutral",  "sad",     "surprise"};
inline constexpr std::array<const char*, 4> kAngleTags{"front", "left-60", "right-60", "top-30"};

/// Throws contract_violation for unknown tags.
int expression_index(const std::string& tag);
morphable::CameraPose angle_pose(const std::string& angle_tag, int resolution);

/// Fixed expression template for `tag`, zero beyond the first eight components.
std::vector<double> expression_template(const std::string& tag, int num_expression);

/// Gaze (yaw, pitch) in degrees encoded by the eye components of beta.
std::array<double, 2> gaze_from_expression(const std::vector<double>& beta);

struct SimConfig {
  int resolution = 128;
  DegradationConfig degradation = DegradationConfig::headset();
  double expression_jitter = 0.15;
  double identity_sigma = 1.0;
  double coeff_clip = morphable::kDefaultCoeffClip;
  int num_identities = 0;  // 0: a fresh identity per sample
  double background = 1.0;
  landmarks::CropGeometry geometry;

  void validate() const;
};

struct AngleCrop {
  std::string tag;
  ImageBuffer image;  // grayscale, 1 channel
};

struct VRSample {
  ImageBuffer full_face;
  ImageBuffer dp_image;
  std::vector<AngleCrop> eye_left;
  std::vector<AngleCrop> eye_right;
  AngleCrop lower_face;
  morphable::CoefficientPair coeffs;
  morphable::CameraPose pose;
  std::string expression_tag;
  landmarks::LandmarkSet landmarks;
  std::array<double, 2> gaze_left{0.0, 0.0};
  std::array<double, 2> gaze_right{0.0, 0.0};
  std::uint64_t seed = 0;
  std::uint64_t identity_seed = 0;

  const ImageBuffer& eye(landmarks::Eye which, const std::string& tag) const;
};

/// Face render with iris discs placed by the gaze encoded in beta.
struct FaceRender {
  ImageBuffer image;
  std::vector<std::int32_t> triangle_id;
  std::array<landmarks::Point2, 2> iris_centroid;  // left, right; NaN when not visible
};
FaceRender render_face(const morphable::MorphableModel& model, const morphable::CoefficientPair& coeffs,
                       const morphable::CameraPose& pose, int resolution, double background = 1.0);

/// Landmark vertices projected at `pose`; iris points come from `render`.
landmarks::LandmarkSet project_landmarks(const morphable::MorphableModel& model, std::span<const double> vertices,
                                         const morphable::CameraPose& pose, const FaceRender* render = nullptr);

morphable::CoefficientPair sample_identity(const morphable::MorphableModel& model, std::uint64_t identity_seed,
                                           const SimConfig& cfg);

/// `noise_seed` drives jitter, occlusion and degradation; defaults to identity_seed.
VRSample generate_sample(const morphable::MorphableModel& model, std::uint64_t identity_seed,
                         const std::string& expression_tag, const SimConfig& cfg, std::uint64_t noise_seed,
                         const std::string& lower_angle = "front");
VRSample generate_sample(const morphable::MorphableModel& model, std::uint64_t identity_seed,
                         const std::string& expression_tag, const SimConfig& cfg);

/// Type invariants of a sample; throws contract_violation.
void validate_sample(const VRSample& sample);
/// Validates every sample, returning the number checked.
std::size_t validate_samples(const std::vector<VRSample>& samples);

struct DatasetManifest {
  std::filesystem::path path;  // manifest.json
  std::string hash;            // sha256 of the manifest text
  std::size_t count = 0;
};

/// Writes `n` samples under `out_dir` ({full,dp,eyeL,eyeR,lower}/NNNNNN_<tag>.png
/// plus manifest.json). Expressions cycle through the eight classes.
DatasetManifest generate_dataset(const morphable::MorphableModel& model, std::size_t n, const SimConfig& cfg,
                                 const std::filesystem::path& out_dir, std::uint64_t seed);

/// The samples generate_dataset would write, kept in memory.
std::vector<VRSample> generate_samples(const morphable::MorphableModel& model, std::size_t n, const SimConfig& cfg,
                                       std::uint64_t seed);

/// Same manifest schema from a folder of face images with external landmarks.
/// `landmarks_json` maps file names to {name: [x, y]} objects.
DatasetManifest ingest_folder(const std::filesystem::path& image_dir, const std::filesystem::path& landmarks_json,
                              const SimConfig& cfg, const std::filesystem::path& out_dir, std::uint64_t seed);

/// Reads a manifest and all referenced images.
std::vector<VRSample> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace rav::datasim
