#include "rav/datasim/datasim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"
#include "rav/core/error.hpp"
#include "rav/core/io.hpp"
#include "rav/kernels/image_ops.hpp"

namespace rav::datasim {
namespace {

using json = nlohmann::json;
using landmarks::Eye;
using landmarks::LandmarkSet;
using landmarks::Point2;
using morphable::CameraPose;
using morphable::CoefficientPair;
using morphable::MorphableModel;
using morphable::Region;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kGazeFullOffsetDeg = 30.0;
constexpr double kIrisRadius = 0.42;  // fraction of the canonical eye half-width
constexpr std::array<double, 3> kIrisColor{0.16, 0.11, 0.08};

constexpr double kTemplates[8][8] = {
    {0.5, -1.0, 1.2, -0.8, 0.6, 0.0, -0.5, 0.9},    // anger
    {-0.8, 0.3, -0.6, 1.1, 0.0, 0.7, 0.4, -0.5},    // contempt
    {0.3, -0.6, 0.9, 0.4, -1.2, 0.5, 0.8, 0.0},     // disgust
    {-0.4, 1.2, -0.9, -0.6, 0.8, -0.7, 0.0, 0.6},   // fear
    {0.9, 0.5, 0.0, 1.3, 0.7, 0.9, -0.8, -0.4},     // happy
    {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},       // neutral
    {-1.0, -0.9, 0.5, -1.1, -0.4, 0.0, 0.9, 0.3},   // sad
    {0.0, 1.4, -1.2, 0.0, 1.1, -0.9, -0.3, -0.8}};  // surprise

struct IrisGeometry {
  double centre_x, centre_y;  // canonical (mean-shape) coordinates
  double radius;
};

// Iris discs live in canonical mean-shape coordinates so that every view of a
// sample shows the same surface texture.
std::array<IrisGeometry, 2> iris_geometry(const MorphableModel& model, const std::vector<double>& beta) {
  const auto lv = morphable::landmark_vertices(model);
  const auto gaze = gaze_from_expression(beta);
  auto make = [&](int a, int b) {
    const double* pa = &model.mean_shape[a * 3];
    const double* pb = &model.mean_shape[b * 3];
    const double half = 0.5 * std::abs(pa[0] - pb[0]);
    return IrisGeometry{0.5 * (pa[0] + pb[0]) + gaze[0] / kGazeFullOffsetDeg * half,
                        0.5 * (pa[1] + pb[1]) + gaze[1] / kGazeFullOffsetDeg * half, kIrisRadius * half};
  };
  return {make(lv.left_eye_outer, lv.left_eye_inner), make(lv.right_eye_inner, lv.right_eye_outer)};
}

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

ImageBuffer first_channel(const ImageBuffer& img) {
  ImageBuffer out(img.height(), img.width(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(y, x, 0) = img.at(y, x, 0);
  return out;
}

ImageBuffer zero_region(ImageBuffer img, const std::vector<std::int32_t>& triangle_id,
                        const std::vector<Region>& labels, Region region) {
  auto data = img.data();
  for (std::size_t p = 0; p < triangle_id.size(); ++p)
    if (triangle_id[p] >= 0 && labels[triangle_id[p]] == region)
      for (int c = 0; c < img.channels(); ++c) data[p * img.channels() + c] = 0.0;
  return img;
}

json point_json(const Point2& p) { return json::array({p.x, p.y}); }

json landmarks_json(const LandmarkSet& lm) {
  json j = json::object();
  for (const auto& [name, p] : lm.points) j[name] = point_json(p);
  return j;
}

LandmarkSet landmarks_from_json(const json& j) {
  LandmarkSet lm;
  for (auto it = j.begin(); it != j.end(); ++it) lm.points[it.key()] = {it.value().at(0), it.value().at(1)};
  return lm;
}

json pose_json(const CameraPose& p) {
  return {{"yaw_deg", p.yaw_deg}, {"pitch_deg", p.pitch_deg}, {"distance", p.distance},
          {"focal_px", p.focal_px}, {"cx", p.cx}, {"cy", p.cy}};
}

CameraPose pose_from_json(const json& j) {
  CameraPose p;
  p.yaw_deg = j.at("yaw_deg");
  p.pitch_deg = j.at("pitch_deg");
  p.distance = j.at("distance");
  p.focal_px = j.at("focal_px");
  p.cx = j.at("cx");
  p.cy = j.at("cy");
  return p;
}

json degradation_json(const DegradationConfig& d) {
  return {{"radial_k1", d.radial_k1},
          {"radial_k2", d.radial_k2},
          {"vignette_strength", d.vignette_strength},
          {"blur_sigma", d.blur_sigma},
          {"grayscale", d.grayscale},
          {"noise_sigma", d.noise_sigma},
          {"eyebrow_occlusion_fraction", d.eyebrow_occlusion_fraction},
          {"mask_margin", d.mask_margin},
          {"lighting_shift", d.lighting_shift}};
}

json config_json(const SimConfig& c) {
  return {{"resolution", c.resolution},
          {"degradation", degradation_json(c.degradation)},
          {"expression_jitter", c.expression_jitter},
          {"identity_sigma", c.identity_sigma},
          {"coeff_clip", c.coeff_clip},
          {"num_identities", c.num_identities},
          {"background", c.background},
          {"eye_fraction", c.geometry.eye_fraction},
          {"lower_width_fraction", c.geometry.lower_width_fraction},
          {"lower_height_fraction", c.geometry.lower_height_fraction},
          {"face_width_per_corner_span", c.geometry.face_width_per_corner_span}};
}

// Writes one image and returns its manifest entry {path, sha256}.
json write_image(const std::filesystem::path& root, const std::string& folder, const std::string& file,
                 const ImageBuffer& img) {
  const auto rel = std::filesystem::path(folder) / file;
  write_png(root / rel, img);
  return {{"path", rel.generic_string()}, {"sha256", sha256_file(root / rel)}};
}

json sample_record(const VRSample& s, std::size_t index, const std::filesystem::path& root) {
  const std::string id = index_name(index);
  json r;
  r["index"] = index;
  r["id"] = id;
  r["expression"] = s.expression_tag;
  r["seed"] = s.seed;
  r["identity_seed"] = s.identity_seed;
  r["full"] = write_image(root, "full", id + "_" + s.expression_tag + ".png", s.full_face);
  r["dp"] = write_image(root, "dp", id + "_dp.png", s.dp_image);
  r["eyeL"] = json::object();
  r["eyeR"] = json::object();
  for (const auto& c : s.eye_left) r["eyeL"][c.tag] = write_image(root, "eyeL", id + "_" + c.tag + ".png", c.image);
  for (const auto& c : s.eye_right) r["eyeR"][c.tag] = write_image(root, "eyeR", id + "_" + c.tag + ".png", c.image);
  r["lower"] = write_image(root, "lower", id + "_" + s.lower_face.tag + ".png", s.lower_face.image);
  r["lower"]["tag"] = s.lower_face.tag;
  r["alpha"] = s.coeffs.shape;
  r["beta"] = s.coeffs.expression;
  r["pose"] = pose_json(s.pose);
  r["landmarks"] = landmarks_json(s.landmarks);
  r["gaze_left"] = s.gaze_left;
  r["gaze_right"] = s.gaze_right;
  return r;
}

DatasetManifest write_manifest(const std::filesystem::path& out_dir, json samples, const json& meta) {
  std::string combined;
  for (const auto& s : samples) {
    for (const char* key : {"full", "dp", "lower"}) combined += s[key]["sha256"].get<std::string>();
    for (const char* key : {"eyeL", "eyeR"})
      for (const auto& [tag, entry] : s[key].items()) combined += entry["sha256"].get<std::string>();
  }
  json m = meta;
  m["schema"] = "rav-dataset/1";
  m["count"] = samples.size();
  m["content_sha256"] = sha256_hex(combined);
  m["samples"] = std::move(samples);
  const auto path = out_dir / "manifest.json";
  const std::string text = m.dump(2) + "\n";
  write_text(path, text);
  return {path, sha256_hex(text), m["count"].get<std::size_t>()};
}

void prepare_dirs(const std::filesystem::path& out_dir) {
  for (const char* d : {"full", "dp", "eyeL", "eyeR", "lower"}) std::filesystem::create_directories(out_dir / d);
}

}  // namespace

DegradationConfig DegradationConfig::headset() {
  DegradationConfig d;
  d.radial_k1 = 0.12;
  d.radial_k2 = 0.04;
  d.vignette_strength = 0.35;
  d.blur_sigma = 0.5;
  d.grayscale = true;
  d.noise_sigma = 0.015;
  d.eyebrow_occlusion_fraction = 0.3;
  d.mask_margin = 1;
  d.lighting_shift = false;
  return d;
}

void DegradationConfig::validate() const {
  for (double v : {radial_k1, radial_k2, vignette_strength, blur_sigma, noise_sigma, eyebrow_occlusion_fraction})
    require(std::isfinite(v), "degradation parameters must be finite", ErrorCategory::invalid_config);
  require(vignette_strength >= 0.0, "vignette_strength must be >= 0", ErrorCategory::invalid_config);
  require(blur_sigma >= 0.0, "blur_sigma must be >= 0", ErrorCategory::invalid_config);
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0", ErrorCategory::invalid_config);
  require(eyebrow_occlusion_fraction >= 0.0 && eyebrow_occlusion_fraction <= 1.0,
          "eyebrow_occlusion_fraction must lie in [0, 1]", ErrorCategory::invalid_config);
  require(mask_margin >= 0, "mask_margin must be >= 0", ErrorCategory::invalid_config);
}

ImageBuffer apply_radial_distortion(const ImageBuffer& img, double k1, double k2) {
  require(img.height() == img.width(), "radial distortion expects a square image");
  return kernels::radial_distort(img, k1, k2);
}

ImageBuffer apply_vignette(const ImageBuffer& img, double strength) { return kernels::vignette(img, strength); }

ImageBuffer degrade(const ImageBuffer& img, const DegradationConfig& cfg, Rng& rng) {
  cfg.validate();
  ImageBuffer out = img;
  if (cfg.radial_k1 != 0.0 || cfg.radial_k2 != 0.0) out = kernels::radial_distort(out, cfg.radial_k1, cfg.radial_k2);
  if (cfg.vignette_strength != 0.0) out = kernels::vignette(out, cfg.vignette_strength);
  if (cfg.blur_sigma > 0.0) out = kernels::gaussian_blur(out, cfg.blur_sigma);
  if (cfg.noise_sigma > 0.0)
    for (double& v : out.data()) v += normal(rng, 0.0, cfg.noise_sigma);
  if (cfg.lighting_shift) {
    const double gain = uniform(rng, 0.7, 1.3);
    const double offset = uniform(rng, -0.1, 0.1);
    for (double& v : out.data()) v = gain * v + offset;
  }
  if (cfg.grayscale && out.channels() == 3) out = replicate_channels(to_grayscale(out), 3);
  if (cfg.mask_margin > 0) {
    const double radius = 0.5 * out.width() - cfg.mask_margin;
    const double cx = 0.5 * out.width(), cy = 0.5 * out.height();
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x)
        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) > radius)
          for (int c = 0; c < out.channels(); ++c) out.at(y, x, c) = 0.0;
  }
  return clamp01(std::move(out));
}

int expression_index(const std::string& tag) {
  for (std::size_t i = 0; i < kExpressionTags.size(); ++i)
    if (tag == kExpressionTags[i]) return static_cast<int>(i);
  throw Error(ErrorCategory::contract_violation, "unknown expression tag '" + tag + "'");
}

CameraPose angle_pose(const std::string& tag, int resolution) {
  if (tag == "front") return CameraPose::make(0, 0, resolution);
  if (tag == "left-60") return CameraPose::make(-60, 0, resolution);
  if (tag == "right-60") return CameraPose::make(60, 0, resolution);
  if (tag == "top-30") return CameraPose::make(0, 30, resolution);
  throw Error(ErrorCategory::contract_violation, "unknown angle tag '" + tag + "'");
}

std::vector<double> expression_template(const std::string& tag, int num_expression) {
  const int e = expression_index(tag);
  std::vector<double> beta(num_expression, 0.0);
  for (int j = 0; j < std::min(num_expression, 8); ++j) beta[j] = kTemplates[e][j];
  return beta;
}

std::array<double, 2> gaze_from_expression(const std::vector<double>& beta) {
  return {beta.size() > 0 ? 10.0 * beta[0] : 0.0, beta.size() > 1 ? 6.0 * beta[1] : 0.0};
}

void SimConfig::validate() const {
  require(resolution >= 32 && resolution <= 512, "resolution must lie in [32, 512]", ErrorCategory::invalid_config);
  degradation.validate();
  require(expression_jitter >= 0.0 && identity_sigma >= 0.0 && coeff_clip > 0.0,
          "jitter, identity_sigma and coeff_clip must be non-negative", ErrorCategory::invalid_config);
  require(num_identities >= 0, "num_identities must be >= 0", ErrorCategory::invalid_config);
}

const ImageBuffer& VRSample::eye(Eye which, const std::string& tag) const {
  for (const auto& c : which == Eye::left ? eye_left : eye_right)
    if (c.tag == tag) return c.image;
  throw Error(ErrorCategory::contract_violation, "sample has no eye crop tagged '" + tag + "'");
}

FaceRender render_face(const MorphableModel& model, const CoefficientPair& coeffs, const CameraPose& pose,
                       int resolution, double background) {
  const auto verts = morphable::evaluate(model, coeffs);
  const std::size_t nv = model.num_vertices;
  std::vector<double> attrs(nv * 6);
  for (std::size_t v = 0; v < nv; ++v)
    for (int k = 0; k < 3; ++k) {
      attrs[v * 6 + k] = model.vertex_colors[v * 3 + k];
      attrs[v * 6 + 3 + k] = model.mean_shape[v * 3 + k];
    }
  const auto r = morphable::rasterize_attributes(model, verts, pose, resolution, attrs, 6);
  const auto labels = morphable::triangle_regions(model);
  const auto iris = iris_geometry(model, coeffs.expression);

  FaceRender out;
  out.image = ImageBuffer(resolution, resolution, 3, background);
  double sx[2] = {0, 0}, sy[2] = {0, 0}, n[2] = {0, 0};
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * resolution + x;
      const auto t = r.triangle_id[p];
      if (t < 0) continue;
      const double* a = &r.attributes[p * 6];
      int eye = -1;
      if (labels[t] == Region::left_eye) eye = 0;
      if (labels[t] == Region::right_eye) eye = 1;
      bool in_iris = false;
      if (eye >= 0 && a[5] > 0.0) {
        const auto& g = iris[eye];
        in_iris = std::hypot(a[3] - g.centre_x, a[4] - g.centre_y) <= g.radius;
      }
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = in_iris ? kIrisColor[c] : a[c];
      if (in_iris) {
        sx[eye] += x + 0.5;
        sy[eye] += y + 0.5;
        n[eye] += 1;
      }
    }
  for (int e = 0; e < 2; ++e)
    out.iris_centroid[e] = n[e] > 0 ? Point2{sx[e] / n[e], sy[e] / n[e]} : Point2{kNaN, kNaN};
  out.triangle_id = r.triangle_id;
  return out;
}

LandmarkSet project_landmarks(const MorphableModel& model, std::span<const double> vertices, const CameraPose& pose,
                              const FaceRender* render) {
  const auto lv = morphable::landmark_vertices(model);
  auto proj = [&](int v) {
    const auto p = morphable::project(pose, std::span<const double, 3>(&vertices[v * 3], 3));
    return Point2{p.x, p.y};
  };
  LandmarkSet lm;
  lm.source = landmarks::LandmarkSource::oracle;
  lm.points["left_eye_outer"] = proj(lv.left_eye_outer);
  lm.points["left_eye_inner"] = proj(lv.left_eye_inner);
  lm.points["right_eye_inner"] = proj(lv.right_eye_inner);
  lm.points["right_eye_outer"] = proj(lv.right_eye_outer);
  lm.points["nose_tip"] = proj(lv.nose_tip);
  lm.points["mouth_left"] = proj(lv.mouth_left);
  lm.points["mouth_right"] = proj(lv.mouth_right);
  lm.points["chin"] = proj(lv.chin);
  const Point2 lc = lm.left_eye_center(), rc = lm.right_eye_center();
  lm.points["left_iris"] = lc;
  lm.points["right_iris"] = rc;
  if (render != nullptr) {
    if (std::isfinite(render->iris_centroid[0].x)) lm.points["left_iris"] = render->iris_centroid[0];
    if (std::isfinite(render->iris_centroid[1].x)) lm.points["right_iris"] = render->iris_centroid[1];
  }
  return lm;
}

CoefficientPair sample_identity(const MorphableModel& model, std::uint64_t identity_seed, const SimConfig& cfg) {
  Rng rng = make_rng(identity_seed, 0x1D);
  CoefficientPair c = CoefficientPair::zeros(model);
  for (double& a : c.shape) a = normal(rng, 0.0, cfg.identity_sigma);
  return morphable::clip_coefficients(std::move(c), cfg.coeff_clip);
}

VRSample generate_sample(const MorphableModel& model, std::uint64_t identity_seed, const std::string& expression_tag,
                         const SimConfig& cfg) {
  return generate_sample(model, identity_seed, expression_tag, cfg, identity_seed);
}

VRSample generate_sample(const MorphableModel& model, std::uint64_t identity_seed, const std::string& expression_tag,
                         const SimConfig& cfg, std::uint64_t noise_seed, const std::string& lower_angle) {
  cfg.validate();
  expression_index(expression_tag);
  angle_pose(lower_angle, cfg.resolution);
  const int res = cfg.resolution;
  Rng rng = make_rng(noise_seed, 0xE5);

  VRSample s;
  s.seed = noise_seed;
  s.identity_seed = identity_seed;
  s.expression_tag = expression_tag;
  s.coeffs = sample_identity(model, identity_seed, cfg);
  s.coeffs.expression = expression_template(expression_tag, model.num_expression);
  if (cfg.expression_jitter > 0.0)
    for (double& b : s.coeffs.expression) b += normal(rng, 0.0, cfg.expression_jitter);
  s.coeffs = morphable::clip_coefficients(std::move(s.coeffs), cfg.coeff_clip);
  s.pose = CameraPose::make(0, 0, res);

  const auto verts = morphable::evaluate(model, s.coeffs);
  const FaceRender full = render_face(model, s.coeffs, s.pose, res, cfg.background);
  s.full_face = full.image;
  CoefficientPair neutral = s.coeffs;
  std::fill(neutral.expression.begin(), neutral.expression.end(), 0.0);
  s.dp_image = render_face(model, neutral, s.pose, res, cfg.background).image;
  s.landmarks = project_landmarks(model, verts, s.pose, &full);
  const auto gaze = gaze_from_expression(s.coeffs.expression);
  s.gaze_left = gaze;
  s.gaze_right = gaze;

  const auto labels = morphable::triangle_regions(model);
  const auto& geo = cfg.geometry;
  // Window sizes come from the frontal landmarks; tilted views re-centre them.
  const int eye_side = landmarks::eye_window_unchecked(s.landmarks, Eye::left, geo).width;
  const auto front_lower = landmarks::lower_window_unchecked(s.landmarks, geo);
  const int eye_out = geo.eye_crop_size(res);
  for (const char* tag : kAngleTags) {
    const CameraPose pose = angle_pose(tag, res);
    const FaceRender view = std::string(tag) == "front" ? full : render_face(model, s.coeffs, pose, res, cfg.background);
    const LandmarkSet lm = project_landmarks(model, verts, pose);
    for (Eye eye : {Eye::left, Eye::right}) {
      ImageBuffer src = view.image;
      if (uniform(rng, 0.0, 1.0) < cfg.degradation.eyebrow_occlusion_fraction)
        src = zero_region(std::move(src), view.triangle_id, labels, Region::eyebrow);
      const Point2 c = eye == Eye::left ? lm.left_eye_center() : lm.right_eye_center();
      const PixelWindow win = landmarks::shift_inside(
          {static_cast<int>(std::lround(c.x - 0.5 * eye_side)), static_cast<int>(std::lround(c.y - 0.5 * eye_side)),
           eye_side, eye_side},
          res, res);
      const ImageBuffer degraded =
          degrade(resize_bilinear(crop(src, win), eye_out, eye_out), cfg.degradation, rng);
      AngleCrop crop_out{tag, cfg.degradation.grayscale ? first_channel(degraded) : to_grayscale(degraded)};
      (eye == Eye::left ? s.eye_left : s.eye_right).push_back(std::move(crop_out));
    }
    if (lower_angle == tag) {
      const Point2& nose = lm.at("nose_tip");
      const PixelWindow win = landmarks::shift_inside(
          {static_cast<int>(std::lround(nose.x - 0.5 * front_lower.width)), static_cast<int>(std::lround(nose.y)),
           front_lower.width, front_lower.height},
          res, res);
      const ImageBuffer window =
          resize_bilinear(crop(view.image, win), geo.lower_crop_height(res), geo.lower_crop_width(res));
      ImageBuffer degraded = degrade(window, cfg.degradation, rng);
      s.lower_face = {tag, cfg.degradation.grayscale ? first_channel(degraded) : to_grayscale(degraded)};
    }
  }
  return s;
}

void validate_sample(const VRSample& s) {
  const int h = s.full_face.height(), w = s.full_face.width();
  require(s.full_face.channels() == 3 && s.dp_image.channels() == 3, "full face and DP images must be RGB");
  require(s.dp_image.same_shape(s.full_face), "DP image must match the full-face shape");
  expression_index(s.expression_tag);
  auto in_range = [](const ImageBuffer& img) {
    for (double v : img.data())
      if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
  };
  require(in_range(s.full_face) && in_range(s.dp_image), "sample images must lie in [0, 1]");
  for (const auto* crops : {&s.eye_left, &s.eye_right}) {
    require(crops->size() == kAngleTags.size(), "each eye needs one crop per angle tag");
    for (const auto& c : *crops) {
      angle_pose(c.tag, 64);
      require(c.image.channels() == 1 && in_range(c.image), "eye crops must be grayscale in [0, 1]");
    }
  }
  angle_pose(s.lower_face.tag, 64);
  require(s.lower_face.image.channels() == 1 && in_range(s.lower_face.image), "lower-face crop must be grayscale");
  s.landmarks.validate(h, w);
  for (double v : s.coeffs.shape) require(std::isfinite(v), "coefficients must be finite");
  for (double v : s.coeffs.expression) require(std::isfinite(v), "coefficients must be finite");
}

std::size_t validate_samples(const std::vector<VRSample>& samples) {
  for (const auto& s : samples) validate_sample(s);
  return samples.size();
}

namespace {

struct SampleSpec {
  std::uint64_t identity, identity_seed, noise_seed;
  std::string tag, lower_tag;
};

SampleSpec sample_spec(std::int64_t i, const SimConfig& cfg, std::uint64_t seed) {
  SampleSpec sp;
  sp.identity = cfg.num_identities > 0 ? static_cast<std::uint64_t>(i % cfg.num_identities) : static_cast<std::uint64_t>(i);
  sp.identity_seed = mix64(seed ^ mix64(sp.identity + 1));
  sp.noise_seed = mix64(mix64(seed) + 0x9E3779B97F4A7C15ull * (i + 1));
  sp.tag = kExpressionTags[i % kExpressionTags.size()];
  sp.lower_tag = kAngleTags[(i / kExpressionTags.size()) % kAngleTags.size()];
  return sp;
}

}  // namespace

std::vector<VRSample> generate_samples(const MorphableModel& model, std::size_t n, const SimConfig& cfg,
                                       std::uint64_t seed) {
  cfg.validate();
  std::vector<VRSample> out(n);
  std::vector<std::string> failures(n);
  const std::int64_t count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      const auto sp = sample_spec(i, cfg, seed);
      out[i] = generate_sample(model, sp.identity_seed, sp.tag, cfg, sp.noise_seed, sp.lower_tag);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  }
  for (const auto& f : failures)
    if (!f.empty()) throw Error(ErrorCategory::internal, "sample generation failed: " + f);
  return out;
}

DatasetManifest generate_dataset(const MorphableModel& model, std::size_t n, const SimConfig& cfg,
                                 const std::filesystem::path& out_dir, std::uint64_t seed) {
  cfg.validate();
  prepare_dirs(out_dir);
  std::vector<json> records(n);
  std::vector<std::string> failures(n);
  const std::int64_t count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      const auto sp = sample_spec(i, cfg, seed);
      const VRSample s = generate_sample(model, sp.identity_seed, sp.tag, cfg, sp.noise_seed, sp.lower_tag);
      records[i] = sample_record(s, i, out_dir);
      records[i]["identity"] = sp.identity;
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  }
  for (const auto& f : failures)
    if (!f.empty()) throw Error(ErrorCategory::internal, "sample generation failed: " + f);
  json meta = {{"source", "synthetic"}, {"seed", seed}, {"config", config_json(cfg)}};
  return write_manifest(out_dir, json(records), meta);
}

DatasetManifest ingest_folder(const std::filesystem::path& image_dir, const std::filesystem::path& landmarks_path,
                              const SimConfig& cfg, const std::filesystem::path& out_dir, std::uint64_t seed) {
  cfg.degradation.validate();
  if (!std::filesystem::is_directory(image_dir))
    throw Error(ErrorCategory::missing_artifact, "image folder not found: " + image_dir.string());
  json lm_all;
  try {
    lm_all = json::parse(read_text(landmarks_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::format_error, std::string("invalid landmarks file: ") + e.what());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(image_dir))
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  prepare_dirs(out_dir);
  json records = json::array();
  for (std::size_t i = 0; i < files.size(); ++i) {
    const std::string name = files[i].filename().string();
    if (!lm_all.contains(name)) throw Error(ErrorCategory::missing_artifact, "no landmarks for " + name);
    ImageBuffer img = read_png(files[i]);
    if (img.channels() == 1) img = replicate_channels(img, 3);
    require(img.height() == img.width(), "ingested images must be square", ErrorCategory::format_error);
    VRSample s;
    s.full_face = img;
    s.dp_image = img;
    s.expression_tag = "neutral";
    s.seed = mix64(seed + i);
    s.pose = CameraPose::make(0, 0, img.width());
    s.landmarks = landmarks_from_json(lm_all[name]);
    s.landmarks.validate(img.height(), img.width());
    Rng rng = make_rng(s.seed, 0xF0);
    const int res = img.width();
    for (Eye eye : {Eye::left, Eye::right}) {
      const auto win = landmarks::shift_inside(landmarks::eye_window_unchecked(s.landmarks, eye, cfg.geometry), res, res);
      const int side = cfg.geometry.eye_crop_size(res);
      const ImageBuffer d = degrade(resize_bilinear(crop(img, win), side, side), cfg.degradation, rng);
      (eye == Eye::left ? s.eye_left : s.eye_right).push_back({"front", to_grayscale(d)});
    }
    const auto win = landmarks::shift_inside(landmarks::lower_window_unchecked(s.landmarks, cfg.geometry), res, res);
    const ImageBuffer window =
        resize_bilinear(crop(img, win), cfg.geometry.lower_crop_height(res), cfg.geometry.lower_crop_width(res));
    s.lower_face = {"front", to_grayscale(degrade(window, cfg.degradation, rng))};
    json r = sample_record(s, i, out_dir);
    r["source_file"] = name;
    records.push_back(std::move(r));
  }
  json meta = {{"source", "folder"}, {"seed", seed}, {"config", config_json(cfg)}};
  return write_manifest(out_dir, std::move(records), meta);
}

std::vector<VRSample> load_dataset(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path))
    throw Error(ErrorCategory::missing_artifact, "dataset manifest not found: " + manifest_path.string());
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::format_error, std::string("invalid manifest: ") + e.what());
  }
  const auto root = manifest_path.parent_path();
  std::vector<VRSample> out;
  try {
    for (const auto& r : m.at("samples")) {
      VRSample s;
      s.full_face = read_png(root / r.at("full").at("path").get<std::string>());
      s.dp_image = read_png(root / r.at("dp").at("path").get<std::string>());
      for (const auto& [tag, e] : r.at("eyeL").items()) s.eye_left.push_back({tag, read_png(root / e.at("path").get<std::string>())});
      for (const auto& [tag, e] : r.at("eyeR").items()) s.eye_right.push_back({tag, read_png(root / e.at("path").get<std::string>())});
      s.lower_face = {r.at("lower").at("tag"), read_png(root / r.at("lower").at("path").get<std::string>())};
      s.coeffs.shape = r.at("alpha").get<std::vector<double>>();
      s.coeffs.expression = r.at("beta").get<std::vector<double>>();
      s.pose = pose_from_json(r.at("pose"));
      s.expression_tag = r.at("expression");
      s.landmarks = landmarks_from_json(r.at("landmarks"));
      s.gaze_left = r.at("gaze_left").get<std::array<double, 2>>();
      s.gaze_right = r.at("gaze_right").get<std::array<double, 2>>();
      s.seed = r.at("seed");
      s.identity_seed = r.value("identity_seed", std::uint64_t{0});
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::format_error, std::string("malformed manifest entry: ") + e.what());
  }
  return out;
}

}  // namespace rav::datasim
