#include <cmath>
#include <filesystem>

#include "nn_doctest.h"

#include "gradcheck.h"

#include "rav/core/error.hpp"
#include "rav/core/random.hpp"
#include "rav/datasim/datasim.hpp"
#include "rav/nn/common.hpp"
#include "rav/restore2d/restore.hpp"

using namespace rav;
using namespace rav::restore2d;
using rav::testing::directional_gradient_error;
namespace fs = std::filesystem;

namespace {

RestoreConfig tiny_config() {
  RestoreConfig c;
  c.height = c.width = 16;
  c.generator.levels = 2;
  c.generator.channels = {4, 8};
  c.generator.heads = {1, 2};
  c.generator.res_blocks = {1, 1};
  c.generator.kv_grid = 4;
  c.disc_scales = 2;
  c.disc_channels = 4;
  c.batch = 2;
  c.seed = 3;
  return c;
}

RestoreConfig small_config() {
  RestoreConfig c;
  c.height = c.width = 32;
  c.generator.channels = {8, 16, 16};
  c.generator.heads = {1, 2, 2};
  c.generator.res_blocks = {1, 1, 1};
  c.disc_channels = 8;
  c.batch = 2;
  c.lr = 1e-3;
  c.seed = 5;
  return c;
}

const std::vector<datasim::VRSample>& samples32() {
  static const auto s = [] {
    datasim::SimConfig cfg;
    cfg.resolution = 32;
    return datasim::generate_samples(morphable::make_synthetic_model(4), 4, cfg, 21);
  }();
  return s;
}

torch::Tensor rand_images(std::int64_t b, std::int64_t h, std::uint64_t seed) {
  return (0.5 + 0.2 * nn::normal_tensor({b, 3, h, h}, seed, 1.0, torch::kFloat64)).clamp(0.0, 1.0);
}

}  // namespace

TEST_CASE("attention weights match a brute-force softmax") {
  const auto q = nn::normal_tensor({1, 4, 4}, 1, 1.0, torch::kFloat64);
  const auto k = nn::normal_tensor({1, 4, 4}, 2, 1.0, torch::kFloat64);
  const auto v = nn::normal_tensor({1, 4, 4}, 3, 1.0, torch::kFloat64);
  torch::Tensor w;
  const auto out = multihead_attention(q, k, v, 2, &w);
  REQUIRE(w.sizes() == torch::IntArrayRef({1, 2, 4, 4}));
  for (int h = 0; h < 2; ++h)
    for (int i = 0; i < 4; ++i) {
      double logits[4], mx = -1e300, sum = 0.0;
      for (int j = 0; j < 4; ++j) {
        double dot = 0.0;
        for (int c = 0; c < 2; ++c) dot += q[0][i][2 * h + c].item<double>() * k[0][j][2 * h + c].item<double>();
        logits[j] = dot / std::sqrt(2.0);
        mx = std::max(mx, logits[j]);
      }
      for (double& l : logits) sum += (l = std::exp(l - mx));
      double row = 0.0;
      for (int j = 0; j < 4; ++j) {
        CHECK(w[0][h][i][j].item<double>() == doctest::Approx(logits[j] / sum).epsilon(1e-12));
        row += w[0][h][i][j].item<double>();
      }
      CHECK(std::abs(row - 1.0) <= 1e-6);
      for (int c = 0; c < 2; ++c) {
        double o = 0.0;
        for (int j = 0; j < 4; ++j) o += logits[j] / sum * v[0][j][2 * h + c].item<double>();
        CHECK(out[0][i][2 * h + c].item<double>() == doctest::Approx(o).epsilon(1e-12));
      }
    }
}

TEST_CASE("attention over a single token returns its value") {
  const auto q = nn::normal_tensor({2, 5, 6}, 4, 1.0, torch::kFloat64);
  const auto k = nn::normal_tensor({2, 1, 6}, 5, 1.0, torch::kFloat64);
  const auto v = nn::normal_tensor({2, 1, 6}, 6, 1.0, torch::kFloat64);
  const auto out = multihead_attention(q, k, v, 3);
  CHECK(torch::equal(out, v.expand({2, 5, 6})));
  CHECK_THROWS_AS(multihead_attention(q, k, v, 4), Error);
}

TEST_CASE("generator contract") {
  RestorationModel m(small_config());
  const auto x = rand_images(2, 32, 7).to(torch::kFloat32), z = rand_images(2, 32, 8).to(torch::kFloat32);
  const auto out = m.g->forward(x, z);
  CHECK(out.sizes() == x.sizes());
  CHECK(out.min().item<double>() >= 0.0);
  CHECK(out.max().item<double>() <= 1.0);
  // Zeroed heads and residual branches start the generator at the identity
  // (up to the 1e-4 clamp inside the logit).
  CHECK((out - x).abs().max().item<double>() <= 2e-4);
  CHECK_THROWS_AS(m.g->forward(x, z.narrow(2, 0, 16)), Error);

  SUBCASE("randomised weights keep the output in range") {
    nn::seeded_normal(*m.g, 9, 0.3);
    const auto o = m.g->forward(x, z);
    CHECK(o.min().item<double>() >= 0.0);
    CHECK(o.max().item<double>() <= 1.0);
    CHECK((o - x).abs().max().item<double>() > 1e-3);
    CHECK(torch::isfinite(o).all().item<bool>());
  }
  SUBCASE("the reference changes the output once attention is active") {
    nn::seeded_normal(*m.g, 10, 0.2);
    const auto z2 = rand_images(2, 32, 11).to(torch::kFloat32);
    CHECK((m.g->forward(x, z) - m.g->forward(x, z2)).abs().max().item<double>() > 0.0);
  }
  SUBCASE("concat fusion variant") {
    auto cfg = small_config();
    cfg.generator.fusion = Fusion::concat;
    RestorationModel c(cfg);
    CHECK((c.g->forward(x, z) - x).abs().max().item<double>() <= 2e-4);
  }
}

TEST_CASE("multiscale discriminator") {
  MultiscaleDiscriminator d(3, 3, 4);
  nn::seeded_init(*d, 1);
  const auto maps = d->forward(torch::rand({2, 3, 64, 64}));
  REQUIRE(maps.size() == 3);
  for (int s = 0; s < 3; ++s) {
    CHECK(maps[s].size(2) == disc_map_size(64, s));
    CHECK(maps[s].size(3) == disc_map_size(64, s));
  }
  CHECK(disc_map_size(64, 0) == 15);

  SUBCASE("shifting a delta probe by one patch stride shifts the logits") {
    nn::PatchDiscriminator p(3, 4);
    nn::seeded_normal(*p, 12, 0.3);
    p->to(torch::kFloat64);
    auto a = torch::zeros({1, 3, 64, 64}, torch::kFloat64), b = torch::zeros({1, 3, 64, 64}, torch::kFloat64);
    a.index_put_({0, torch::indexing::Slice(), 24, 24}, 1.0);
    b.index_put_({0, torch::indexing::Slice(), 28, 28}, 1.0);
    const auto la = p->forward(a), lb = p->forward(b);
    double worst = 0.0;
    // Interior logits whose receptive field avoids the zero padding.
    for (int i = 2; i <= 11; ++i)
      for (int j = 2; j <= 11; ++j)
        worst = std::max(worst, std::abs(la[0][0][i][j].item<double>() - lb[0][0][i + 1][j + 1].item<double>()));
    CHECK(worst <= 1e-12);
    CHECK((la - lb).abs().max().item<double>() > 1e-6);
  }
}

TEST_CASE("loss closed forms") {
  metrics::PerceptualProxy proxy;
  proxy->to(torch::kFloat64);
  const auto y = rand_images(2, 16, 13);
  const std::vector<torch::Tensor> zero_logits{torch::zeros({2, 1, 3, 3}, torch::kFloat64),
                                               torch::zeros({2, 1, 1, 1}, torch::kFloat64)};
  const auto g = generator_loss(y, y, zero_logits, {1.0, 1.0, 1.0}, proxy);
  CHECK(g.l1.item<double>() == 0.0);
  CHECK(g.lpips.item<double>() == 0.0);
  CHECK(g.adv.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const auto y2 = rand_images(2, 16, 14);
  const LossWeights w{0.3, 0.7, 1.9};
  const auto r = generator_loss(y2, y, zero_logits, w, proxy);
  const double recomputed = 0.3 * r.adv.item<double>() + 0.7 * r.l1.item<double>() + 1.9 * r.lpips.item<double>();
  CHECK(r.total.item<double>() == doctest::Approx(recomputed).epsilon(1e-12));
  CHECK(r.l1.item<double>() > 0.0);
  CHECK(r.lpips.item<double>() > 0.0);
  const auto no_lpips = generator_loss(y2, y, zero_logits, {0.3, 0.7, 0.0}, proxy);
  CHECK(no_lpips.total.item<double>() ==
        doctest::Approx(0.3 * r.adv.item<double>() + 0.7 * r.l1.item<double>()).epsilon(1e-12));

  const auto literal = adversarial_generator_term(zero_logits, true);
  CHECK(literal.item<double>() == doctest::Approx(-std::log(2.0)).epsilon(1e-12));

  const auto d = discriminator_loss(zero_logits, zero_logits);
  CHECK(d.total.item<double>() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  std::vector<torch::Tensor> real{torch::full({2, 1, 3, 3}, 50.0, torch::kFloat64)};
  std::vector<torch::Tensor> fake{torch::full({2, 1, 3, 3}, -50.0, torch::kFloat64)};
  CHECK(discriminator_loss(real, fake).total.item<double>() <= 1e-3);
  CHECK(discriminator_loss(fake, real).total.item<double>() == doctest::Approx(100.0).epsilon(1e-9));
  CHECK_THROWS_AS(discriminator_loss(real, zero_logits), Error);
}

TEST_CASE("finite-difference gradient checks at 16x16") {
  RestorationModel m(tiny_config());
  m.to(torch::kFloat64);
  nn::seeded_normal(*m.g, 15, 0.2);
  nn::seeded_normal(*m.d, 16, 0.2);
  const auto x = rand_images(2, 16, 17), z = rand_images(2, 16, 18), y = rand_images(2, 16, 19);

  SUBCASE("generator total") {
    auto loss = [&] {
      const auto out = m.g->forward(x, z);
      return generator_loss(out, y, m.d->forward(out), m.config.weights, m.proxy).total;
    };
    CHECK(directional_gradient_error(m.g->parameters(), loss, 20) <= 1e-3);
    CHECK(directional_gradient_error(m.g->parameters(), loss, 21) <= 1e-3);
  }
  SUBCASE("discriminator total") {
    torch::Tensor fake;
    {
      torch::NoGradGuard guard;
      fake = m.g->forward(x, z);
    }
    auto loss = [&] { return discriminator_loss(m.d, y, fake).total; };
    CHECK(directional_gradient_error(m.d->parameters(), loss, 22) <= 1e-3);
    CHECK(directional_gradient_error(m.d->parameters(), loss, 23) <= 1e-3);
  }
}

TEST_CASE("training") {
  const auto data = make_restoration_set(samples32());
  auto cfg = small_config();

  SUBCASE("zero steps leave the parameters unchanged") {
    RestorationModel m(cfg);
    const auto before = nn::snapshot(*m.g);
    const auto r = train_restoration(m, data);
    CHECK(r.history.empty());
    CHECK(nn::bit_equal(before, nn::snapshot(*m.g)));
  }
  SUBCASE("history has a G and a D row per step and is deterministic") {
    cfg.steps = 3;
    RestorationModel a(cfg), b(cfg);
    const auto ra = train_restoration(a, data), rb = train_restoration(b, data);
    CHECK(ra.history.size() == 6);
    CHECK(ra.history.series("G", "total").size() == 3);
    CHECK(ra.history.series("D", "total").size() == 3);
    CHECK(ra.history.hash() == rb.history.hash());
    CHECK(a.parameter_hash() == b.parameter_hash());
    for (const auto& row : ra.history.rows())
      for (const auto& [k, v] : row.terms) CHECK(v >= 0.0);
  }
  SUBCASE("ablation switches train") {
    cfg.steps = 2;
    cfg.zero_reference = true;
    cfg.weights.lpips = 0.0;
    cfg.generator.fusion = Fusion::concat;
    RestorationModel m(cfg);
    const auto before = m.parameter_hash();
    const auto r = train_restoration(m, data);
    CHECK(r.history.size() == 4);
    CHECK(m.parameter_hash() != before);
  }
  SUBCASE("shape mismatch is a configuration error") {
    cfg.height = cfg.width = 64;
    RestorationModel m(cfg);
    try {
      train_restoration(m, data);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::invalid_config);
    }
  }
}

TEST_CASE("restoration set and inference") {
  const auto& samples = samples32();
  const auto data = make_restoration_set(samples);
  REQUIRE(data.size() == samples.size());
  const auto& s = samples[1];
  CHECK(data.x[1] == landmarks::paste_crops(s.dp_image, s.eye(landmarks::Eye::left, "front"),
                                            s.eye(landmarks::Eye::right, "front"), s.lower_face.image, s.landmarks,
                                            4.0));
  CHECK(data.z[1] == s.dp_image);
  CHECK(data.y[1] == s.full_face);

  SUBCASE("identity-initialised aligners pass tilted crops through") {
    align::AlignmentModelSet set;
    align::AlignConfig ac;
    ac.height = ac.width = s.eye_left[0].image.height();
    ac.architecture = align::Architecture::autoencoder;
    set.slots.emplace(align::Slot::left_eye, align::AlignmentModel(ac));
    set.slots.emplace(align::Slot::right_eye, align::AlignmentModel(ac));
    const auto aligned = make_restoration_set(samples, 4.0, &set, "left-60");
    const auto raw = landmarks::paste_crops(s.dp_image, s.eye(landmarks::Eye::left, "left-60"),
                                            s.eye(landmarks::Eye::right, "left-60"), s.lower_face.image, s.landmarks,
                                            4.0);
    CHECK(mean_abs_difference(aligned.x[1], raw) <= 1e-6);
    try {
      align::AlignmentModelSet empty;
      make_restoration_set(samples, 4.0, &empty, "left-60");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::missing_artifact);
    }
  }

  RestorationModel m(small_config());
  nn::seeded_normal(*m.g, 30, 0.1);
  const auto a = restore(m, s.eye(landmarks::Eye::left, "front"), s.eye(landmarks::Eye::right, "front"),
                         s.lower_face.image, s.dp_image, s.landmarks);
  const auto b = restore(m, s.eye(landmarks::Eye::left, "front"), s.eye(landmarks::Eye::right, "front"),
                         s.lower_face.image, s.dp_image, s.landmarks);
  CHECK(a == b);
  CHECK(a.height() == 32);
  CHECK(a.channels() == 3);
  for (double v : a.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(a == generate(m, {data.x[1]}, {data.z[1]}).front());
  const auto roi = crop_eye_region(a, s.landmarks);
  CHECK(roi.width() > 0);
}

TEST_CASE("eye-window chroma") {
  const auto& s = samples32()[0];
  CHECK(eye_window_chroma(replicate_channels(to_grayscale(s.full_face), 3), s.landmarks) < 1e-20);
  ImageBuffer tinted = s.full_face;
  for (int y = 0; y < tinted.height(); ++y)
    for (int x = 0; x < tinted.width(); ++x) tinted.at(y, x, 0) = 1.0, tinted.at(y, x, 2) = 0.0;
  CHECK(eye_window_chroma(tinted, s.landmarks) > 1e-4);
}

TEST_CASE("checkpoint and configuration round trips") {
  auto cfg = small_config();
  cfg.generator.fusion = Fusion::concat;
  cfg.weights.lpips = 0.25;
  const auto back = RestoreConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  RestorationModel m(cfg);
  nn::seeded_normal(*m.g, 31, 0.1);
  const auto path = fs::temp_directory_path() / "rav_test_restore.ravck";
  save_restoration(path, m);
  const auto loaded = load_restoration(path);
  CHECK(loaded.parameter_hash() == m.parameter_hash());
  const auto data = make_restoration_set(samples32());
  CHECK(generate(loaded, {data.x[0]}, {data.z[0]}).front() == generate(m, {data.x[0]}, {data.z[0]}).front());

  try {
    load_restoration(fs::temp_directory_path() / "rav_missing.ravck");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::missing_artifact);
  }
  auto bad = cfg.to_json();
  bad["generator"]["heads"] = {3, 2, 2};
  CHECK_THROWS_AS(RestoreConfig::from_json(bad), Error);
  bad = cfg.to_json();
  bad["height"] = 24;
  try {
    RestoreConfig::from_json(bad);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::invalid_config);
  }
}
