#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "rav/core/error.hpp"
#include "rav/core/random.hpp"
#include "rav/morphable/model.hpp"
#include "rav/morphable/render.hpp"

using namespace rav;
using namespace rav::morphable;

namespace {

const MorphableModel& small_model() {
  static const MorphableModel m = make_synthetic_model(3, 1500, 6, 5);
  return m;
}

CoefficientPair random_coeffs(const MorphableModel& m, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  CoefficientPair c = CoefficientPair::zeros(m);
  for (double& v : c.shape) v = uniform(rng, -2, 2);
  for (double& v : c.expression) v = uniform(rng, -2, 2);
  return c;
}

// Brute-force per-vertex summation written independently of evaluate().
std::vector<double> oracle_vertices(const MorphableModel& m, const CoefficientPair& c) {
  std::vector<double> out(m.num_vertices * 3);
  for (int v = 0; v < m.num_vertices; ++v)
    for (int k = 0; k < 3; ++k) {
      double acc = m.mean_shape[v * 3 + k];
      for (int i = 0; i < m.num_shape; ++i) acc += c.shape[i] * m.shape_basis[(i * m.num_vertices + v) * 3 + k];
      for (int j = 0; j < m.num_expression; ++j)
        acc += c.expression[j] * m.expression_basis[(j * m.num_vertices + v) * 3 + k];
      out[v * 3 + k] = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("synthetic model shapes and determinism") {
  const auto a = make_synthetic_model(9, 500, 8, 6);
  CHECK(a.num_vertices == 500);
  CHECK(a.mean_shape.size() == 500 * 3);
  CHECK(a.shape_basis.size() == 8 * 500 * 3);
  CHECK(a.expression_basis.size() == 6 * 500 * 3);
  CHECK(a.vertex_colors.size() == 500 * 3);
  CHECK(a.regions.size() == 500);
  const auto b = make_synthetic_model(9, 500, 8, 6);
  CHECK(a.mean_shape == b.mean_shape);
  CHECK(a.shape_basis == b.shape_basis);
  CHECK(a.expression_basis == b.expression_basis);
  CHECK(a.triangles == b.triangles);
  const auto c = make_synthetic_model(10, 500, 8, 6);
  CHECK(a.shape_basis != c.shape_basis);
  CHECK(make_synthetic_model(1, 501, 2, 2).num_vertices == 501);
}

TEST_CASE("synthetic model satisfies topology and orthogonality invariants") {
  const auto& m = small_model();
  std::vector<int> refs(m.num_vertices, 0);
  for (const auto& t : m.triangles)
    for (auto i : t) {
      REQUIRE(i >= 0);
      REQUIRE(i < m.num_vertices);
      ++refs[i];
    }
  for (int r : refs) CHECK(r >= 1);
  const std::size_t n = m.num_vertices * 3;
  auto check_basis = [&](const std::vector<double>& basis, int count) {
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < i; ++j) {
        double d = 0, ni = 0, nj = 0;
        for (std::size_t k = 0; k < n; ++k) {
          d += basis[i * n + k] * basis[j * n + k];
          ni += basis[i * n + k] * basis[i * n + k];
          nj += basis[j * n + k] * basis[j * n + k];
        }
        CHECK(std::abs(d) <= 1e-6 * std::sqrt(ni * nj));
      }
  };
  check_basis(m.shape_basis, m.num_shape);
  check_basis(m.expression_basis, m.num_expression);
  double max_norm = 0;
  for (int v = 0; v < m.num_vertices; ++v)
    max_norm = std::max(max_norm, std::hypot(m.mean_shape[v * 3], m.mean_shape[v * 3 + 1], m.mean_shape[v * 3 + 2]));
  CHECK(max_norm <= 1.0 + 1e-12);
  for (int r = 0; r < kNumRegions; ++r) {
    const bool present = std::find(m.regions.begin(), m.regions.end(), static_cast<Region>(r)) != m.regions.end();
    CHECK(present);
  }
}

TEST_CASE("make_model orthogonalises bases and rejects bad topology") {
  auto raw = make_synthetic_model(2, 200, 3, 2);
  const std::size_t n = raw.num_vertices * 3;
  // Make basis 1 a copy of basis 0 plus noise, then re-orthogonalise.
  for (std::size_t k = 0; k < n; ++k) raw.shape_basis[n + k] = raw.shape_basis[k] + 0.01 * std::sin(double(k));
  const auto m = make_model(raw);
  double d = 0;
  for (std::size_t k = 0; k < n; ++k) d += m.shape_basis[k] * m.shape_basis[n + k];
  CHECK(std::abs(d) < 1e-9);
  auto bad = raw;
  bad.triangles[0][1] = bad.num_vertices;
  CHECK_THROWS_AS(make_model(bad), Error);
}

TEST_CASE("evaluate is linear and matches the per-vertex oracle") {
  const auto& m = small_model();
  CHECK(evaluate(m, CoefficientPair::zeros(m)) == m.mean_shape);
  const auto c = random_coeffs(m, 4);
  const auto out = evaluate(m, c);
  const auto ref = oracle_vertices(m, c);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - ref[i]) <= 1e-9);

  CoefficientPair a = CoefficientPair::zeros(m), a2 = a;
  a.shape = c.shape;
  a2.shape = c.shape;
  for (double& v : a2.shape) v *= 2;
  const auto e1 = evaluate(m, a), e2 = evaluate(m, a2);
  for (std::size_t i = 0; i < e1.size(); ++i)
    CHECK(std::abs((e2[i] - m.mean_shape[i]) - 2 * (e1[i] - m.mean_shape[i])) <= 1e-9);

  const auto c2 = random_coeffs(m, 5);
  CoefficientPair sum = c;
  for (std::size_t i = 0; i < sum.shape.size(); ++i) sum.shape[i] += c2.shape[i];
  for (std::size_t i = 0; i < sum.expression.size(); ++i) sum.expression[i] += c2.expression[i];
  const auto es = evaluate(m, sum), e2b = evaluate(m, c2);
  for (std::size_t i = 0; i < es.size(); ++i)
    CHECK(std::abs((es[i] - m.mean_shape[i]) - (out[i] - m.mean_shape[i]) - (e2b[i] - m.mean_shape[i])) <= 1e-9);

  CoefficientPair wrong = c;
  wrong.shape.pop_back();
  CHECK_THROWS_AS(evaluate(m, wrong), Error);
}

TEST_CASE("coefficient validation and clipping") {
  const auto& m = small_model();
  auto c = CoefficientPair::zeros(m);
  CHECK_NOTHROW(validate(c, m));
  c.shape[0] = 3.5;
  CHECK_THROWS_AS(validate(c, m), Error);
  CHECK(clip_coefficients(c).shape[0] == 3.0);
  c.shape[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(validate(c, m), Error);
}

TEST_CASE("region labels parse and reject unknown names") {
  for (int r = 0; r < kNumRegions; ++r)
    CHECK(parse_region(region_name(static_cast<Region>(r))) == static_cast<Region>(r));
  CHECK_THROWS_AS(parse_region("nose"), Error);
}

TEST_CASE("model archive round trip") {
  const auto& m = small_model();
  const auto path = std::filesystem::temp_directory_path() / "rav_model_test.ravmm";
  save_model(m, path);
  const auto back = load_model(path);
  CHECK(back.num_vertices == m.num_vertices);
  CHECK(back.triangles == m.triangles);
  CHECK(back.regions == m.regions);
  for (std::size_t i = 0; i < m.mean_shape.size(); ++i)
    CHECK(back.mean_shape[i] == doctest::Approx(m.mean_shape[i]).epsilon(1e-6));
}

TEST_CASE("camera pose validation") {
  CHECK_THROWS_AS(CameraPose::make(0, 0, 64, 1.0), Error);
  CHECK_THROWS_AS(CameraPose::make(0, 90, 64), Error);
  const auto p = CameraPose::make(0, 0, 64);
  const double origin[3] = {0, 0, 0};
  const auto ip = project(p, std::span<const double, 3>(origin, 3));
  CHECK(ip.x == 32.0);
  CHECK(ip.y == 32.0);
  CHECK(ip.depth == doctest::Approx(4.0));
  const double right[3] = {0.5, 0.5, 0};
  const auto rp = project(p, std::span<const double, 3>(right, 3));
  CHECK(rp.x > 32.0);  // +x appears on the image right
  CHECK(rp.y < 32.0);  // +y appears towards the top
}

TEST_CASE("pixel rays pass through projected points") {
  const auto pose = CameraPose::make(25, -10, 64);
  const double pt[3] = {0.2, -0.1, 0.3};
  const auto ip = project(pose, std::span<const double, 3>(pt, 3));
  std::array<double, 3> o, d;
  const int x = static_cast<int>(std::floor(ip.x)), y = static_cast<int>(std::floor(ip.y));
  pixel_ray(pose, x, y, o, d);
  // Distance from the point to the ray is below a pixel footprint at that depth.
  const double rel[3] = {pt[0] - o[0], pt[1] - o[1], pt[2] - o[2]};
  const double t = rel[0] * d[0] + rel[1] * d[1] + rel[2] * d[2];
  const double dist = std::hypot(rel[0] - t * d[0], rel[1] - t * d[1], rel[2] - t * d[2]);
  CHECK(dist < 1.5 * ip.depth / pose.focal_px);
}

TEST_CASE("render with constant colours") {
  auto m = small_model();
  std::vector<double> grey(m.num_vertices * 3, 0.5);
  RenderOptions opts;
  opts.colors = grey;
  const auto pose = CameraPose::make(0, 0, 64);
  const auto img = render_3dmm(m, CoefficientPair::zeros(m), pose, 64, opts);
  const auto fp = footprint_mask(m, CoefficientPair::zeros(m), pose, 64, opts);
  int covered = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) {
        if (fp.at(y, x, 0) > 0) {
          CHECK(img.at(y, x, c) == doctest::Approx(0.5).epsilon(1e-12));
          covered += c == 0;
        } else {
          CHECK(img.at(y, x, c) == 1.0);
        }
      }
  CHECK(covered > 64 * 64 / 4);
  CHECK_THROWS_AS(render_3dmm(m, CoefficientPair::zeros(m), pose, 16), Error);
}

TEST_CASE("render is deterministic and mirror-equivariant") {
  const auto& m = small_model();
  const auto zero = CoefficientPair::zeros(m);
  const auto a = render_3dmm(m, zero, CameraPose::make(60, 0, 96), 96);
  const auto a2 = render_3dmm(m, zero, CameraPose::make(60, 0, 96), 96);
  CHECK(a == a2);
  const auto b = render_3dmm(m, zero, CameraPose::make(-60, 0, 96), 96);
  const auto fb = flip_horizontal(b);
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - fb.data()[i]));
  CHECK(worst <= 1e-6);
}

TEST_CASE("z-buffer winner has minimal depth among covering triangles") {
  const auto& m = small_model();
  const auto coeffs = random_coeffs(m, 8);
  const auto verts = evaluate(m, coeffs);
  const auto pose = CameraPose::make(35, 12, 48);
  const auto r = render_vertices(m, verts, pose, 48);
  std::vector<ImagePoint> pts(m.num_vertices);
  for (int v = 0; v < m.num_vertices; ++v) pts[v] = project(pose, std::span<const double, 3>(&verts[v * 3], 3));
  int checked = 0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : m.triangles) {
        const auto &A = pts[t[0]], &B = pts[t[1]], &C = pts[t[2]];
        const double area = (B.x - A.x) * (C.y - A.y) - (B.y - A.y) * (C.x - A.x);
        if (area == 0) continue;
        const double l0 = ((C.x - B.x) * (py - B.y) - (C.y - B.y) * (px - B.x)) / area;
        const double l1 = ((A.x - C.x) * (py - C.y) - (A.y - C.y) * (px - C.x)) / area;
        const double l2 = 1 - l0 - l1;
        if (l0 < -1e-9 || l1 < -1e-9 || l2 < -1e-9) continue;
        best = std::min(best, 1.0 / (l0 / A.depth + l1 / B.depth + l2 / C.depth));
      }
      const std::size_t p = y * 48 + x;
      if (r.triangle_id[p] >= 0) {
        CHECK(r.depth[p] <= best + 1e-7);
        ++checked;
      }
    }
  CHECK(checked > 200);
}

TEST_CASE("region masks partition the footprint") {
  const auto& m = small_model();
  const auto coeffs = random_coeffs(m, 2);
  const auto pose = CameraPose::make(0, 0, 64);
  const auto fp = footprint_mask(m, coeffs, pose, 64);
  ImageBuffer sum(64, 64, 1);
  for (int r = 0; r < kNumRegions; ++r) {
    const auto mask = region_mask(m, coeffs, pose, 64, static_cast<Region>(r));
    for (std::size_t i = 0; i < mask.size(); ++i) {
      CHECK(mask.data()[i] <= fp.data()[i]);
      sum.data()[i] += mask.data()[i];
    }
  }
  CHECK(sum == fp);
}

TEST_CASE("left-eye mask pixel count matches a brute-force rasteriser") {
  const auto& m = small_model();
  const auto zero = CoefficientPair::zeros(m);
  const int res = 64;
  const auto pose = CameraPose::make(0, 0, res);
  const auto mask = region_mask(m, zero, pose, res, Region::left_eye);
  const auto labels = triangle_regions(m);
  std::vector<ImagePoint> pts(m.num_vertices);
  for (int v = 0; v < m.num_vertices; ++v)
    pts[v] = project(pose, std::span<const double, 3>(&m.mean_shape[v * 3], 3));
  int expected = 0, actual = 0;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double best = std::numeric_limits<double>::infinity();
      int winner = -1;
      for (int t = 0; t < m.num_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        const auto &A = pts[tri[0]], &B = pts[tri[1]], &C = pts[tri[2]];
        const double area = (B.x - A.x) * (C.y - A.y) - (B.y - A.y) * (C.x - A.x);
        if (area == 0) continue;
        const double l0 = ((C.x - B.x) * (py - B.y) - (C.y - B.y) * (px - B.x)) / area;
        const double l1 = ((A.x - C.x) * (py - C.y) - (A.y - C.y) * (px - C.x)) / area;
        const double l2 = 1 - l0 - l1;
        if (l0 < 0 || l1 < 0 || l2 < 0) continue;
        const double z = 1.0 / (l0 / A.depth + l1 / B.depth + l2 / C.depth);
        if (z < best) best = z, winner = t;
      }
      expected += winner >= 0 && labels[winner] == Region::left_eye;
      actual += mask.at(y, x, 0) > 0;
    }
  CHECK(expected > 10);
  CHECK(std::abs(actual - expected) <= 1);
}

TEST_CASE("left eye appears on the image left at the frontal pose") {
  const auto& m = small_model();
  const auto zero = CoefficientPair::zeros(m);
  const auto pose = CameraPose::make(0, 0, 64);
  const auto left = region_mask(m, zero, pose, 64, Region::left_eye);
  double cx = 0, n = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (left.at(y, x, 0) > 0) cx += x + 0.5, n += 1;
  REQUIRE(n > 0);
  CHECK(cx / n < 32.0);
  const auto lm = landmark_vertices(m);
  CHECK(m.mean_shape[lm.left_eye_outer * 3] < m.mean_shape[lm.right_eye_outer * 3]);
  CHECK(m.mean_shape[lm.chin * 3 + 1] < m.mean_shape[lm.nose_tip * 3 + 1]);
}
