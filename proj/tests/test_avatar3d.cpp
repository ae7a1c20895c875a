#include <cmath>
#include <filesystem>

#include "nn_doctest.h"

#include "gradcheck.h"

#include "rav/avatar3d/avatar.hpp"
#include "rav/core/error.hpp"
#include "rav/core/random.hpp"
#include "rav/nn/common.hpp"

using namespace rav;
using namespace rav::avatar3d;
using rav::testing::directional_gradient_error;
namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

AvatarConfig small_config() {
  AvatarConfig c;
  c.input_size = 32;
  c.triplane_resolution = 8;
  c.triplane_channels = 8;
  c.encoder_width = 16;
  c.render_resolution = 32;
  c.samples_per_ray = 8;
  c.sr_width = 8;
  c.disc_channels = 8;
  c.batch = 2;
  c.lr = 1e-3;
  c.seed = 3;
  return c;
}

const morphable::MorphableModel& face_model() {
  static const auto m = morphable::make_synthetic_model(4);
  return m;
}

const std::vector<datasim::VRSample>& samples64() {
  static const auto s = [] {
    datasim::SimConfig cfg;
    cfg.resolution = 64;
    return datasim::generate_samples(face_model(), 3, cfg, 8);
  }();
  return s;
}

const AvatarSet& small_set() {
  static const auto s = make_avatar_set(samples64(), face_model(), small_config());
  return s;
}

/// Tri-plane lookup through grid_sample: corner-aligned nodes, border padding.
torch::Tensor grid_sample_oracle(const torch::Tensor& planes, const torch::Tensor& points, double half) {
  const auto b = planes.size(0), n = points.size(1), c = planes.size(4);
  auto out = torch::zeros({b, n, c}, planes.options());
  const std::array<std::array<int, 2>, 3> axes{{{0, 1}, {0, 2}, {1, 2}}};
  for (std::int64_t i = 0; i < b; ++i)
    for (int p = 0; p < 3; ++p) {
      const auto img = planes[i][p].permute({2, 0, 1}).unsqueeze(0);
      const auto uv = torch::stack({points[i].select(1, axes[p][0]), points[i].select(1, axes[p][1])}, 1) / half;
      const auto grid = uv.clamp(-1.0, 1.0).view({1, n, 1, 2});
      const auto s = F::grid_sample(img, grid,
                                    F::GridSampleFuncOptions().align_corners(true).padding_mode(torch::kBorder));
      out[i] += s.view({c, n}).t();
    }
  return out;
}

/// Emission-absorption compositing written with cumulative sums.
torch::Tensor composite_oracle(const torch::Tensor& sigma, const torch::Tensor& rgb, const torch::Tensor& delta,
                               const torch::Tensor& bg) {
  const auto tau = sigma * delta;
  const auto before = torch::cumsum(tau, 1) - tau;
  const auto w = torch::exp(-before) * (1.0 - torch::exp(-tau));
  return (w.unsqueeze(2) * rgb).sum(1) + (1.0 - w.sum(1, true)) * bg.view({1, 3});
}

/// Rays through the front camera that cross the cube through the z = +-1
/// faces have chord length 2 / |d_z|; returns {ray index, chord}.
std::vector<std::pair<std::int64_t, double>> axial_chords(int res) {
  const auto pose = front_pose(res);
  std::vector<std::pair<std::int64_t, double>> out;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      std::array<double, 3> o, d;
      morphable::pixel_ray(pose, x, y, o, d);
      const double t_exit = (o[2] + 1.0) / -d[2];
      if (std::abs(o[0] + t_exit * d[0]) < 0.9 && std::abs(o[1] + t_exit * d[1]) < 0.9)
        out.push_back({static_cast<std::int64_t>(y) * res + x, 2.0 / std::abs(d[2])});
    }
  return out;
}

double max_transmittance_error(int samples, double sigma) {
  const int res = 8;
  const auto rays = make_rays(front_pose(res), res, samples, 1.0, 0.5, 0, torch::kFloat64);
  const auto field = [&](const torch::Tensor& p) {
    return std::pair{torch::full({p.size(0)}, sigma, p.options()), torch::full({p.size(0), 3}, 0.3, p.options())};
  };
  const auto out = render_field(field, rays, 1.0);
  const auto trans = out.transmittance.flatten();
  double worst = 0.0;
  for (const auto& [r, chord] : axial_chords(res))
    worst = std::max(worst, std::abs(trans[r].item<double>() - std::exp(-sigma * chord)));
  return worst;
}

void randomise(AvatarModel& m, std::uint64_t seed, double std) {
  std::uint64_t s = seed;
  for (auto* e : {&m.global, &m.detail, &m.expression}) nn::seeded_normal(**e, s = mix64(s), std);
}

}  // namespace

TEST_CASE("tri-plane sampling op matches a grid_sample oracle and its gradient") {
  const auto planes = nn::normal_tensor({2, 3, 6, 6, 4}, 1, 1.0, torch::kFloat64).requires_grad_();
  const auto points = 1.3 * (2.0 * torch::rand({2, 50, 3}, torch::kFloat64) - 1.0);
  const auto out = sample_triplane(planes, points, 1.0);
  const auto oracle = grid_sample_oracle(planes.detach(), points, 1.0);
  CHECK((out - oracle).abs().max().item<double>() <= 1e-10);

  const auto w = nn::normal_tensor(out.sizes(), 2, 1.0, torch::kFloat64);
  (out * w).sum().backward();
  const auto ref_planes = planes.detach().clone().requires_grad_();
  (grid_sample_oracle(ref_planes, points, 1.0) * w).sum().backward();
  CHECK((planes.grad() - ref_planes.grad()).abs().max().item<double>() <= 1e-10);

  SUBCASE("constant planes give three times the value") {
    const auto c = torch::full({1, 3, 4, 4, 2}, 0.25, torch::kFloat64);
    CHECK((sample_triplane(c, points.narrow(0, 0, 1), 1.0) - 0.75).abs().max().item<double>() <= 1e-15);
  }
  SUBCASE("non-finite points are rejected") {
    auto bad = points.clone();
    bad[0][0][0] = std::nan("");
    CHECK_THROWS_AS(sample_triplane(planes, bad, 1.0), Error);
  }
}

TEST_CASE("compositing op matches the cumulative-sum formula and autograd") {
  const auto sigma = torch::rand({5, 7}, torch::kFloat64).mul(3.0).requires_grad_();
  const auto rgb = torch::rand({5, 7, 3}, torch::kFloat64).requires_grad_();
  const auto delta = torch::rand({5, 7}, torch::kFloat64).mul(0.4);
  const auto bg = torch::tensor({0.2, 0.5, 1.0}, torch::kFloat64);
  torch::Tensor trans;
  const auto out = composite(sigma, rgb, delta, bg, &trans);
  const auto s2 = sigma.detach().clone().requires_grad_(), c2 = rgb.detach().clone().requires_grad_();
  const auto ref = composite_oracle(s2, c2, delta, bg);
  CHECK((out - ref).abs().max().item<double>() <= 1e-12);
  CHECK((trans - torch::exp(-(sigma * delta).sum(1))).abs().max().item<double>() <= 1e-12);
  const auto w = nn::normal_tensor(out.sizes(), 4, 1.0, torch::kFloat64);
  (out * w).sum().backward();
  (ref * w).sum().backward();
  CHECK((sigma.grad() - s2.grad()).abs().max().item<double>() <= 1e-10);
  CHECK((rgb.grad() - c2.grad()).abs().max().item<double>() <= 1e-10);
}

TEST_CASE("branches start as all-zero tri-planes") {
  AvatarModel m(small_config());
  const auto x = torch::rand({2, 3, 32, 32});
  const auto pose = front_pose(32);
  for (const auto& t : {global_branch(m, x, pose), detail_branch(m, x), expression_branch(m, x)}) {
    CHECK(t.sizes() == torch::IntArrayRef{2, 3, 8, 8, 8});
    CHECK(t.abs().max().item<double>() == 0.0);
  }
  randomise(m, 5, 0.1);
  const auto a = global_branch(m, x, pose), b = global_branch(m, x, pose);
  CHECK(torch::isfinite(a).all().item<bool>());
  CHECK(torch::equal(a, b));
  CHECK(a.abs().max().item<double>() > 0.0);
  CHECK(!torch::equal(a, global_branch(m, x, morphable::CameraPose::make(30, 0, 32))));
  CHECK_THROWS_AS(detail_branch(m, torch::rand({2, 1, 32, 32})), Error);
}

TEST_CASE("combine is elementwise addition") {
  const auto g = nn::normal_tensor({1, 3, 4, 4, 2}, 1), d = nn::normal_tensor({1, 3, 4, 4, 2}, 2),
             e = nn::normal_tensor({1, 3, 4, 4, 2}, 3);
  const auto c = combine(g, d, e);
  const auto gf = g.flatten(), df = d.flatten(), ef = e.flatten(), cf = c.flatten();
  for (std::int64_t i = 0; i < cf.numel(); ++i)
    CHECK(cf[i].item<float>() == gf[i].item<float>() + (df[i].item<float>() + ef[i].item<float>()));
  CHECK(torch::equal(combine(g, d, e), combine(g, e, d)));
  CHECK(torch::equal(combine(g, torch::zeros_like(g), torch::zeros_like(g)), g));
  CHECK_THROWS_AS(combine(g, d, torch::zeros({1, 3, 4, 4, 3})), Error);
}

TEST_CASE("volume rendering") {
  SUBCASE("zero density shows the background") {
    const auto rays = make_rays(front_pose(8), 8, 16, 1.0, 0.5, 0, torch::kFloat64);
    const auto out = render_field(
        [](const torch::Tensor& p) {
          return std::pair{torch::zeros({p.size(0)}, p.options()), torch::full({p.size(0), 3}, 0.2, p.options())};
        },
        rays, 0.75);
    CHECK((out.image - 0.75).abs().max().item<double>() == 0.0);
    CHECK((out.transmittance - 1.0).abs().max().item<double>() == 0.0);
  }
  SUBCASE("homogeneous medium matches exp(-sigma L) and converges at first order") {
    CHECK(max_transmittance_error(128, 2.0) <= 1e-3);
    std::vector<double> errors;
    for (int s : {16, 32, 64, 128}) errors.push_back(max_transmittance_error(s, 2.0));
    for (std::size_t i = 1; i < errors.size(); ++i) {
      const double ratio = errors[i] / errors[i - 1];
      CHECK(ratio >= 0.4);
      CHECK(ratio <= 0.6);
    }
  }
  SUBCASE("an opaque slab shows its colour") {
    const auto rays = make_rays(front_pose(8), 8, 128, 1.0, 0.5, 0, torch::kFloat64);
    const auto colour = torch::tensor({0.9, 0.1, 0.4}, torch::kFloat64);
    const auto out = render_field(
        [&](const torch::Tensor& p) {
          const auto inside = p.select(1, 2).abs() <= 0.2;
          return std::pair{torch::where(inside, 1e4, 0.0).to(torch::kFloat64), colour.expand({p.size(0), 3})};
        },
        rays, 1.0);
    const auto pixels = out.image.flatten(1);
    for (const auto& [r, chord] : axial_chords(8))
      CHECK((pixels.select(1, r) - colour).abs().max().item<double>() <= 1e-3);
  }
  SUBCASE("rays that miss the cube are background") {
    const auto rays = make_rays(morphable::CameraPose::make(0, 0, 8, 4.0, 0.2), 8, 4, 1.0, 0.5);
    CHECK(!rays.hit[0].item<bool>());
    CHECK(rays.hit[4 * 8 + 4].item<bool>());
    CHECK(rays.delta[0].abs().sum().item<double>() == 0.0);
  }
  SUBCASE("model renders are images in range") {
    AvatarModel m(small_config());
    const auto planes = nn::normal_tensor({2, 3, 8, 8, 8}, 9);
    const auto img = volume_render(m, planes, front_pose(16), 16);
    CHECK(img.sizes() == torch::IntArrayRef{2, 3, 16, 16});
    CHECK(img.min().item<double>() >= 0.0);
    CHECK(img.max().item<double>() <= 1.0);
    CHECK(torch::equal(img, volume_render(m, planes, front_pose(16), 16)));
  }
}

TEST_CASE("super-resolution starts as clamped bicubic upsampling") {
  AvatarModel m(small_config());
  const auto low = torch::rand({2, 3, 8, 8});
  const auto out = super_resolve(m, low);
  CHECK(out.sizes() == torch::IntArrayRef{2, 3, 16, 16});
  const auto bicubic = F::interpolate(low, F::InterpolateFuncOptions()
                                               .size(std::vector<std::int64_t>{16, 16})
                                               .mode(torch::kBicubic)
                                               .align_corners(false));
  CHECK(torch::equal(out, bicubic.clamp(0.0, 1.0)));
  nn::seeded_normal(*m.sr, 2, 0.5);
  const auto r = super_resolve(m, low);
  CHECK(r.min().item<double>() >= 0.0);
  CHECK(r.max().item<double>() <= 1.0);
}

TEST_CASE("stage losses") {
  auto cfg = small_config();
  cfg.stage1.global = 0.3;
  cfg.stage1.combined = 2.0;
  AvatarModel m(cfg);
  const auto& set = small_set();

  SUBCASE("stage 1 is the declared combination and vanishes on equal images") {
    const auto rays = make_rays(front_pose(32), 32, 8, 1.0, 0.5);
    const auto l = stage1_loss(m, set, rays);
    const auto v = l.values();
    CHECK(v.at("L_G") == doctest::Approx(v.at("global_l1") + v.at("global_lpips")).epsilon(1e-6));
    CHECK(v.at("L_Combined") == doctest::Approx(v.at("combined_l1") + v.at("combined_lpips")).epsilon(1e-6));
    CHECK(v.at("total") == doctest::Approx(0.3 * v.at("L_G") + 2.0 * v.at("L_Combined")).epsilon(1e-6));
    const auto zero = stage1_terms(m, set.neutral, set.target_low, set);
    CHECK(zero.total.item<double>() == 0.0);
    CHECK_THROWS_AS(stage1_terms(m, set.neutral.narrow(0, 0, 1), set.target_low, set), Error);
  }
  SUBCASE("stage 2 terms and the eye weight") {
    const auto same = stage2_terms(m, set.target, set).values();
    for (const auto* k : {"l1", "lpips", "eye_l1", "eye_lpips"}) CHECK(same.at(k) == 0.0);
    const auto out = (set.target * 0.8 + 0.1).clamp(0.0, 1.0);
    const auto v = stage2_terms(m, out, set).values();
    const auto& w = cfg.stage2;
    CHECK(v.at("eye_l1") > 0.0);
    CHECK(v.at("total") == doctest::Approx(w.l1 * v.at("l1") + w.lpips * v.at("lpips") + w.gan * v.at("gan") +
                                           w.eye * (v.at("eye_l1") + v.at("eye_lpips")))
                               .epsilon(1e-6));
    AvatarModel no_eye = m;
    no_eye.config.stage2.eye = 0.0;
    const auto u = stage2_terms(no_eye, out, set).values();
    CHECK(u.at("total") == doctest::Approx(w.l1 * u.at("l1") + w.lpips * u.at("lpips") + w.gan * u.at("gan")).epsilon(1e-6));
  }
  SUBCASE("stage 2 gradients reach only the super-resolution module") {
    randomise(m, 7, 0.1);
    const auto rays = make_rays(front_pose(32), 32, 8, 1.0, 0.5);
    stage2_loss(m, set, rays).total.backward();
    for (const auto& p : m.stage1_parameters()) CHECK((!p.grad().defined() || p.grad().abs().max().item<double>() == 0.0));
    double sr_grad = 0.0;
    for (const auto& p : m.sr_parameters())
      if (p.grad().defined()) sr_grad += p.grad().abs().sum().item<double>();
    CHECK(sr_grad > 0.0);
  }
}

TEST_CASE("stage-1 gradient matches finite differences at 16x16 with 8 samples") {
  AvatarConfig c;
  c.input_size = 16;
  c.triplane_resolution = 4;
  c.triplane_channels = 4;
  c.encoder_width = 8;
  c.render_resolution = 16;
  c.samples_per_ray = 8;
  c.sr_width = 4;
  c.disc_channels = 4;
  c.seed = 11;
  AvatarModel m(c);
  m.to(torch::kFloat64);
  randomise(m, 12, 0.2);
  AvatarSet b;
  b.source = torch::rand({2, 3, 16, 16}, torch::kFloat64);
  b.expression = torch::rand({2, 3, 16, 16}, torch::kFloat64);
  b.neutral = torch::rand({2, 3, 16, 16}, torch::kFloat64);
  b.target_low = torch::rand({2, 3, 16, 16}, torch::kFloat64);
  const auto rays = make_rays(front_pose(16), 16, 8, 1.0, std::nullopt, 13, torch::kFloat64);
  const auto loss = [&] { return stage1_loss(m, b, rays).total; };
  CHECK(directional_gradient_error(m.stage1_parameters(), loss, 30) <= 1e-3);
  CHECK(directional_gradient_error(m.stage1_parameters(), loss, 31) <= 1e-3);
}

TEST_CASE("avatar training") {
  auto cfg = small_config();
  const auto& set = small_set();

  SUBCASE("zero steps leave the parameters unchanged") {
    AvatarModel m(cfg);
    const auto before = m.parameter_hash();
    CHECK(train_avatar(m, set).history.empty());
    CHECK(m.parameter_hash() == before);
    CHECK(m.regressor.fitted());
  }
  SUBCASE("history and determinism") {
    cfg.stage1_steps = 2;
    cfg.stage2_steps = 1;
    AvatarModel a(cfg), b(cfg);
    const auto ra = train_avatar(a, set), rb = train_avatar(b, set);
    CHECK(ra.history.size() == 4);
    CHECK(ra.history.series("stage1", "L_Combined").size() == 2);
    CHECK(ra.history.series("stage2_D", "total").size() == 1);
    CHECK(ra.history.hash() == rb.history.hash());
    CHECK(a.parameter_hash() == b.parameter_hash());
  }
  SUBCASE("stage 2 leaves the branches and decoder bit-identical") {
    cfg.stage1_steps = 1;
    AvatarModel m(cfg);
    train_avatar(m, set);
    const auto stage1 = m.stage1_parameters();
    std::vector<torch::Tensor> frozen;
    for (const auto& p : stage1) frozen.push_back(p.detach().clone());
    const auto sr_before = nn::snapshot(*m.sr);
    m.config.stage1_steps = 0;
    m.config.stage2_steps = 2;
    train_avatar(m, set);
    for (std::size_t i = 0; i < stage1.size(); ++i) CHECK(torch::equal(frozen[i], stage1[i]));
    CHECK(!nn::bit_equal(sr_before, nn::snapshot(*m.sr)));
  }
  SUBCASE("mismatched data is rejected") {
    auto other = small_config();
    other.render_resolution = 64;
    other.disc_scales = 1;
    AvatarModel m(other);
    CHECK_THROWS_AS(train_avatar(m, set), Error);
  }
}

TEST_CASE("avatar set and driving") {
  const auto& mm = face_model();
  const auto& set = small_set();
  CHECK(set.size() == 3);
  CHECK(set.source.sizes() == torch::IntArrayRef{3, 3, 32, 32});
  CHECK(set.target.sizes() == torch::IntArrayRef{3, 3, 64, 64});
  CHECK(set.neutral.sizes() == torch::IntArrayRef{3, 3, 32, 32});
  for (const auto& w : set.eye_windows) CHECK(w.inside(64, 64));
  const auto neutral = expression_render(mm, std::vector<double>(mm.num_expression, 0.0), 32);
  CHECK(neutral == morphable::render_3dmm(mm, morphable::CoefficientPair::zeros(mm), front_pose(32), 32));

  auto cfg = small_config();
  AvatarModel m(cfg);
  randomise(m, 17, 0.1);
  const auto& s = samples64()[0];
  try {
    drive_avatar(m, mm, s.dp_image, s.full_face, front_pose(64));
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::missing_artifact);
  }
  const auto a = drive_avatar(m, mm, s.dp_image, s.full_face, front_pose(64), s.coeffs.expression);
  const auto b = drive_avatar(m, mm, s.dp_image, s.full_face, front_pose(64), s.coeffs.expression);
  CHECK(a.image == b.image);
  CHECK(a.image.height() == 64);
  CHECK(a.low_res.height() == 32);
  CHECK(a.seconds >= 0.0);
  const auto turned = drive_avatar(m, mm, s.dp_image, s.full_face, morphable::CameraPose::make(30, 0, 64),
                                   s.coeffs.expression);
  for (double v : turned.image.data()) CHECK((std::isfinite(v) && v >= 0.0 && v <= 1.0));
  CHECK(turned.image != a.image);

  train_avatar(m, set);
  CHECK(m.regressor.predict(s.full_face).size() == static_cast<std::size_t>(mm.num_expression));
  CHECK(drive_avatar(m, mm, s.dp_image, s.full_face, front_pose(64)).image.height() == 64);
}

TEST_CASE("configuration and checkpoint round trips") {
  auto cfg = small_config();
  cfg.stage2.eye = 0.5;
  CHECK(AvatarConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  auto bad = cfg.to_json();
  bad["input_size"] = 24;
  try {
    AvatarConfig::from_json(bad);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::invalid_config);
  }
  bad = cfg.to_json();
  bad["sr_factor"] = 3;
  CHECK_THROWS_AS(AvatarConfig::from_json(bad), Error);

  AvatarModel m(cfg);
  randomise(m, 19, 0.1);
  train_avatar(m, small_set());
  const auto path = fs::temp_directory_path() / "rav_test_avatar.ravck";
  save_avatar(path, m);
  const auto loaded = load_avatar(path);
  CHECK(loaded.parameter_hash() == m.parameter_hash());
  CHECK(loaded.config.to_json() == cfg.to_json());
  REQUIRE(loaded.regressor.fitted());
  CHECK(torch::allclose(loaded.regressor.weights, m.regressor.weights));
  fs::remove(path);
  try {
    load_avatar(path);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::missing_artifact);
  }
}
