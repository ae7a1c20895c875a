#include "rav/morphable/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rav/core/archive.hpp"
#include "rav/core/error.hpp"
#include "rav/core/random.hpp"

namespace rav::morphable {
namespace {

using Vec3 = std::array<double, 3>;
constexpr double kPi = std::numbers::pi;

double dot_flat(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Modified Gram-Schmidt, run twice for numerical orthogonality. Vectors keep
// the norm of their orthogonal component.
void orthogonalize(std::vector<double>& basis, int count, std::size_t dim) {
  for (int pass = 0; pass < 2; ++pass)
    for (int i = 0; i < count; ++i) {
      double* vi = basis.data() + i * dim;
      for (int j = 0; j < i; ++j) {
        const double* vj = basis.data() + j * dim;
        const double njj = dot_flat(vj, vj, dim);
        if (njj == 0.0) continue;
        const double proj = dot_flat(vi, vj, dim) / njj;
        for (std::size_t k = 0; k < dim; ++k) vi[k] -= proj * vj[k];
      }
    }
}

void check_orthogonal(const std::vector<double>& basis, int count, std::size_t dim, const char* what) {
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < i; ++j) {
      const double* a = basis.data() + i * dim;
      const double* b = basis.data() + j * dim;
      const double d = std::abs(dot_flat(a, b, dim));
      const double scale = std::sqrt(dot_flat(a, a, dim) * dot_flat(b, b, dim));
      require(d <= 1e-6 * scale + 1e-300, std::string(what) + " basis is not orthogonal");
    }
}

// ---- procedural head -------------------------------------------------------

struct Direction {
  double elevation;  // radians above the equator
  double azimuth;    // radians from +z towards +x
};

Region classify(Direction d) {
  const double el = d.elevation, az = d.azimuth, aaz = std::abs(az);
  const double eye_el = 0.13, eye_az = 0.40;
  const double e = std::pow((el - eye_el) / 0.075, 2) + std::pow((aaz - eye_az) / 0.17, 2);
  if (e <= 1.0) return az < 0 ? Region::left_eye : Region::right_eye;
  if (el >= 0.24 && el <= 0.32 && aaz >= 0.20 && aaz <= 0.62) return Region::eyebrow;
  if (std::pow((el + 0.43) / 0.065, 2) + std::pow(az / 0.30, 2) <= 1.0) return Region::mouth;
  if (el > 0.55 || (aaz > 1.7 && el > -0.4)) return Region::other;
  return Region::skin;
}

double bump(Direction d, double el0, double az0, double width_el, double width_az) {
  const double a = (d.elevation - el0) / width_el, b = (d.azimuth - az0) / width_az;
  return std::exp(-0.5 * (a * a + b * b));
}

// Radius of the neutral head along a direction; symmetric in azimuth.
double head_radius(const Vec3& dir, Direction d) {
  const double ax = 0.78, ay = 1.0, az = 0.88;
  double r = 1.0 / std::sqrt(std::pow(dir[0] / ax, 2) + std::pow(dir[1] / ay, 2) + std::pow(dir[2] / az, 2));
  const double front = std::max(0.0, dir[2]);
  const Direction m{d.elevation, std::abs(d.azimuth)};
  r += 0.16 * bump(m, -0.05, 0.0, 0.10, 0.09) * front;   // nose
  r -= 0.035 * bump(m, 0.13, 0.40, 0.07, 0.14) * front;  // eye sockets
  r += 0.025 * bump(m, 0.27, 0.40, 0.05, 0.25) * front;  // brow ridge
  r += 0.03 * bump(m, -0.43, 0.0, 0.08, 0.30) * front;   // lips
  r += 0.04 * bump(m, -0.72, 0.0, 0.10, 0.25) * front;   // chin
  return r;
}

Vec3 region_color(Region region, const Vec3& dir) {
  const double shade = 0.72 + 0.28 * std::max(0.0, dir[2]);
  switch (region) {
    case Region::skin: return {0.88 * shade, 0.68 * shade, 0.56 * shade};
    case Region::left_eye:
    case Region::right_eye: return {0.95, 0.95, 0.94};
    case Region::eyebrow: return {0.27, 0.19, 0.13};
    case Region::mouth: return {0.74 * shade, 0.34 * shade, 0.34 * shade};
    case Region::other: return {0.33 * shade, 0.24 * shade, 0.16 * shade};
  }
  return {0.5, 0.5, 0.5};
}

Region mirror_region(Region r) {
  if (r == Region::left_eye) return Region::right_eye;
  if (r == Region::right_eye) return Region::left_eye;
  return r;
}

struct RingLayout {
  std::vector<int> counts;
  bool bottom_pole = true;
};

RingLayout plan_rings(int num_vertices) {
  RingLayout layout;
  layout.bottom_pole = (num_vertices % 2 == 0);
  const int ring_total = num_vertices - (layout.bottom_pole ? 2 : 1);
  const int rings = std::max(4, static_cast<int>(std::lround(std::sqrt(kPi * ring_total / 4.0))));
  std::vector<double> weight(rings);
  for (int i = 0; i < rings; ++i) weight[i] = std::sin(kPi * (i + 1) / (rings + 1));
  const double wsum = std::accumulate(weight.begin(), weight.end(), 0.0);
  layout.counts.resize(rings);
  int total = 0;
  for (int i = 0; i < rings; ++i) {
    layout.counts[i] = 2 * std::max(2, static_cast<int>(std::lround(0.5 * ring_total * weight[i] / wsum)));
    total += layout.counts[i];
  }
  // Rebalance two vertices at a time, starting from the equator.
  std::vector<int> order(rings);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return weight[a] > weight[b]; });
  for (int guard = 0; total != ring_total && guard < 100000; ++guard) {
    const int ring = order[guard % rings];
    if (total < ring_total) {
      layout.counts[ring] += 2;
      total += 2;
    } else if (layout.counts[ring] > 4) {
      layout.counts[ring] -= 2;
      total -= 2;
    }
  }
  require(total == ring_total, "cannot distribute vertices over rings");
  return layout;
}

// Zipper-triangulates the x >= 0 half of the strip between two rings (azimuth
// 0..pi), then mirrors it.
void stitch_rings(int a_start, int a_count, int b_start, int b_count,
                  std::vector<kernels::Triangle>& tris) {
  const int ha = a_count / 2, hb = b_count / 2;
  auto mirror = [](int start, int count, int k) { return start + (count - k) % count; };
  std::vector<kernels::Triangle> half;
  int i = 0, j = 0;
  while (i < ha || j < hb) {
    const bool advance_a = j == hb || (i < ha && static_cast<double>(i + 1) / ha <= static_cast<double>(j + 1) / hb);
    if (advance_a) {
      half.push_back({a_start + i, a_start + i + 1, b_start + j});
      ++i;
    } else {
      half.push_back({a_start + i, b_start + j + 1, b_start + j});
      ++j;
    }
  }
  for (const auto& t : half) tris.push_back(t);
  for (const auto& t : half) {
    auto m = [&](int v) {
      if (v >= b_start && v < b_start + b_count) return mirror(b_start, b_count, v - b_start);
      return mirror(a_start, a_count, v - a_start);
    };
    tris.push_back({m(t[0]), m(t[2]), m(t[1])});
  }
}

void stitch_pole(int pole, int ring_start, int ring_count, bool top, std::vector<kernels::Triangle>& tris) {
  const int h = ring_count / 2;
  std::vector<kernels::Triangle> half;
  for (int k = 0; k < h; ++k) {
    if (top)
      half.push_back({pole, ring_start + k, ring_start + k + 1});
    else
      half.push_back({pole, ring_start + k + 1, ring_start + k});
  }
  for (const auto& t : half) tris.push_back(t);
  for (const auto& t : half) {
    auto m = [&](int v) { return v == pole ? pole : ring_start + (ring_count - (v - ring_start)) % ring_count; };
    tris.push_back({m(t[0]), m(t[2]), m(t[1])});
  }
}

// Smooth random displacement field: sum of Gaussian bumps on the sphere of
// directions, optionally confined near given centres.
std::vector<double> smooth_field(Rng& rng, const std::vector<Vec3>& dirs, const std::vector<Vec3>& centres,
                                 double width) {
  std::vector<double> field(dirs.size() * 3, 0.0);
  for (const auto& c : centres) {
    const Vec3 amp{normal(rng), normal(rng), normal(rng)};
    for (std::size_t v = 0; v < dirs.size(); ++v) {
      const double d2 = std::pow(dirs[v][0] - c[0], 2) + std::pow(dirs[v][1] - c[1], 2) +
                        std::pow(dirs[v][2] - c[2], 2);
      const double g = std::exp(-0.5 * d2 / (width * width));
      for (int k = 0; k < 3; ++k) field[v * 3 + k] += amp[k] * g;
    }
  }
  return field;
}

Vec3 direction_of(double elevation, double azimuth) {
  return {std::cos(elevation) * std::sin(azimuth), std::sin(elevation), std::cos(elevation) * std::cos(azimuth)};
}

void scale_to_max_displacement(double* v, int num_vertices, double target) {
  double max_norm = 0.0;
  for (int i = 0; i < num_vertices; ++i)
    max_norm = std::max(max_norm, std::sqrt(v[i * 3] * v[i * 3] + v[i * 3 + 1] * v[i * 3 + 1] + v[i * 3 + 2] * v[i * 3 + 2]));
  if (max_norm == 0.0) return;
  for (int i = 0; i < num_vertices * 3; ++i) v[i] *= target / max_norm;
}

}  // namespace

std::string_view region_name(Region region) {
  switch (region) {
    case Region::skin: return "skin";
    case Region::left_eye: return "left-eye";
    case Region::right_eye: return "right-eye";
    case Region::eyebrow: return "eyebrow";
    case Region::mouth: return "mouth";
    case Region::other: return "other";
  }
  return "other";
}

Region parse_region(std::string_view name) {
  for (int i = 0; i < kNumRegions; ++i)
    if (region_name(static_cast<Region>(i)) == name) return static_cast<Region>(i);
  throw Error(ErrorCategory::contract_violation, "unknown region label '" + std::string(name) + "'");
}

CoefficientPair CoefficientPair::zeros(const MorphableModel& model) {
  return {std::vector<double>(model.num_shape, 0.0), std::vector<double>(model.num_expression, 0.0)};
}

void validate(const MorphableModel& m) {
  const std::size_t v3 = static_cast<std::size_t>(m.num_vertices) * 3;
  require(m.num_vertices > 0 && m.num_shape >= 0 && m.num_expression >= 0, "model dimensions must be positive");
  require(m.mean_shape.size() == v3, "mean_shape must be V x 3");
  require(m.shape_basis.size() == m.num_shape * v3, "shape_basis must be K_s x V x 3");
  require(m.expression_basis.size() == m.num_expression * v3, "expression_basis must be K_e x V x 3");
  require(m.vertex_colors.size() == v3, "vertex_colors must be V x 3");
  require(m.regions.size() == static_cast<std::size_t>(m.num_vertices), "regions must have one label per vertex");
  for (double c : m.vertex_colors) require(c >= 0.0 && c <= 1.0, "vertex colours must lie in [0, 1]");
  std::vector<char> used(m.num_vertices, 0);
  for (const auto& t : m.triangles)
    for (auto i : t) {
      require(i >= 0 && i < m.num_vertices, "triangle index out of range");
      used[i] = 1;
    }
  require(std::all_of(used.begin(), used.end(), [](char u) { return u != 0; }),
          "every vertex must be referenced by a triangle");
  check_orthogonal(m.shape_basis, m.num_shape, v3, "shape");
  check_orthogonal(m.expression_basis, m.num_expression, v3, "expression");
}

MorphableModel make_model(MorphableModel raw) {
  const std::size_t v3 = static_cast<std::size_t>(raw.num_vertices) * 3;
  require(raw.shape_basis.size() == raw.num_shape * v3 && raw.expression_basis.size() == raw.num_expression * v3,
          "basis sizes do not match declared dimensions");
  orthogonalize(raw.shape_basis, raw.num_shape, v3);
  orthogonalize(raw.expression_basis, raw.num_expression, v3);
  validate(raw);
  return raw;
}

void validate(const CoefficientPair& c, const MorphableModel& m, double clip) {
  require(c.shape.size() == static_cast<std::size_t>(m.num_shape), "shape coefficient count mismatch");
  require(c.expression.size() == static_cast<std::size_t>(m.num_expression), "expression coefficient count mismatch");
  for (double v : c.shape) require(std::isfinite(v) && std::abs(v) <= clip, "shape coefficient out of range");
  for (double v : c.expression) require(std::isfinite(v) && std::abs(v) <= clip, "expression coefficient out of range");
}

CoefficientPair clip_coefficients(CoefficientPair c, double clip) {
  for (double& v : c.shape) v = std::clamp(v, -clip, clip);
  for (double& v : c.expression) v = std::clamp(v, -clip, clip);
  return c;
}

std::vector<double> evaluate(const MorphableModel& m, const CoefficientPair& c) {
  require(c.shape.size() == static_cast<std::size_t>(m.num_shape), "shape coefficient count mismatch");
  require(c.expression.size() == static_cast<std::size_t>(m.num_expression), "expression coefficient count mismatch");
  const std::int64_t v3 = static_cast<std::int64_t>(m.num_vertices) * 3;
  std::vector<double> out(m.mean_shape);
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < v3; ++k) {
    double acc = out[k];
    for (int i = 0; i < m.num_shape; ++i) acc += c.shape[i] * m.shape_basis[i * v3 + k];
    for (int j = 0; j < m.num_expression; ++j) acc += c.expression[j] * m.expression_basis[j * v3 + k];
    out[k] = acc;
  }
  return out;
}

MorphableModel make_synthetic_model(std::uint64_t seed, int num_vertices, int num_shape, int num_expression) {
  require(num_vertices >= 50, "synthetic model needs at least 50 vertices");
  require(num_shape >= 0 && num_expression >= 2, "synthetic model needs K_s >= 0 and K_e >= 2");
  const RingLayout layout = plan_rings(num_vertices);
  const int rings = static_cast<int>(layout.counts.size());

  MorphableModel m;
  m.num_vertices = num_vertices;
  m.num_shape = num_shape;
  m.num_expression = num_expression;
  m.mean_shape.resize(num_vertices * 3);
  m.vertex_colors.resize(num_vertices * 3);
  m.regions.resize(num_vertices);
  std::vector<Vec3> dirs(num_vertices);

  auto place = [&](int v, const Vec3& dir, Direction d) {
    dirs[v] = dir;
    const double r = head_radius(dir, d);
    const Region region = classify(d);
    const Vec3 col = region_color(region, dir);
    for (int k = 0; k < 3; ++k) {
      m.mean_shape[v * 3 + k] = r * dir[k];
      m.vertex_colors[v * 3 + k] = col[k];
    }
    m.regions[v] = region;
  };
  auto mirror_of = [&](int dst, int src) {
    dirs[dst] = {-dirs[src][0], dirs[src][1], dirs[src][2]};
    m.mean_shape[dst * 3] = -m.mean_shape[src * 3];
    m.mean_shape[dst * 3 + 1] = m.mean_shape[src * 3 + 1];
    m.mean_shape[dst * 3 + 2] = m.mean_shape[src * 3 + 2];
    for (int k = 0; k < 3; ++k) m.vertex_colors[dst * 3 + k] = m.vertex_colors[src * 3 + k];
    m.regions[dst] = mirror_region(m.regions[src]);
  };

  int next = 0;
  const int top_pole = next++;
  place(top_pole, {0.0, 1.0, 0.0}, {kPi / 2, 0.0});
  std::vector<int> ring_start(rings);
  for (int i = 0; i < rings; ++i) {
    const double theta = kPi * (i + 1) / (rings + 1);
    const double elevation = kPi / 2 - theta;
    const int n = layout.counts[i];
    ring_start[i] = next;
    for (int k = 0; k <= n / 2; ++k) {
      const double az = 2.0 * kPi * k / n;
      Vec3 dir{std::sin(theta) * std::sin(az), std::cos(theta), std::sin(theta) * std::cos(az)};
      if (k == 0 || 2 * k == n) dir[0] = 0.0;
      if (2 * k == n) dir[2] = -std::sin(theta);
      place(next + k, dir, {elevation, 2 * k == n ? kPi : az});
    }
    for (int k = n / 2 + 1; k < n; ++k) mirror_of(next + k, next + (n - k));
    next += n;
  }
  int bottom_pole = -1;
  if (layout.bottom_pole) {
    bottom_pole = next++;
    place(bottom_pole, {0.0, -1.0, 0.0}, {-kPi / 2, 0.0});
  }

  // Normalise into the unit sphere.
  double max_norm = 0.0;
  for (int v = 0; v < num_vertices; ++v)
    max_norm = std::max(max_norm, std::sqrt(std::pow(m.mean_shape[v * 3], 2) + std::pow(m.mean_shape[v * 3 + 1], 2) +
                                            std::pow(m.mean_shape[v * 3 + 2], 2)));
  for (double& x : m.mean_shape) x /= max_norm;

  stitch_pole(top_pole, ring_start[0], layout.counts[0], true, m.triangles);
  for (int i = 0; i + 1 < rings; ++i)
    stitch_rings(ring_start[i], layout.counts[i], ring_start[i + 1], layout.counts[i + 1], m.triangles);
  if (bottom_pole >= 0) stitch_pole(bottom_pole, ring_start[rings - 1], layout.counts[rings - 1], false, m.triangles);

  // Bases: identity fields anywhere on the head, expression fields on the face.
  Rng rng = make_rng(seed, 1);
  const std::size_t v3 = static_cast<std::size_t>(num_vertices) * 3;
  m.shape_basis.assign(num_shape * v3, 0.0);
  m.expression_basis.assign(num_expression * v3, 0.0);
  for (int i = 0; i < num_shape; ++i) {
    std::vector<Vec3> centres;
    for (int c = 0; c < 4; ++c) centres.push_back(direction_of(uniform(rng, -1.2, 1.0), uniform(rng, -kPi, kPi)));
    const auto field = smooth_field(rng, dirs, centres, 0.45);
    std::copy(field.begin(), field.end(), m.shape_basis.begin() + i * v3);
  }
  for (int j = 0; j < num_expression; ++j) {
    std::vector<Vec3> centres;
    if (j < 2) {
      // Components 0 and 1 act on the eye area (eyelids/brows).
      centres = {direction_of(0.16, -0.40), direction_of(0.16, 0.40)};
    } else {
      for (int c = 0; c < 3; ++c) centres.push_back(direction_of(uniform(rng, -0.7, 0.35), uniform(rng, -0.8, 0.8)));
      centres.push_back(direction_of(-0.43, uniform(rng, -0.2, 0.2)));
    }
    const auto field = smooth_field(rng, dirs, centres, j < 2 ? 0.10 : 0.18);
    std::copy(field.begin(), field.end(), m.expression_basis.begin() + j * v3);
  }
  orthogonalize(m.shape_basis, num_shape, v3);
  orthogonalize(m.expression_basis, num_expression, v3);
  for (int i = 0; i < num_shape; ++i) scale_to_max_displacement(m.shape_basis.data() + i * v3, num_vertices, 0.035);
  for (int j = 0; j < num_expression; ++j)
    scale_to_max_displacement(m.expression_basis.data() + j * v3, num_vertices, 0.03);
  validate(m);
  return m;
}

LandmarkVertices landmark_vertices(const MorphableModel& m) {
  auto nearest = [&](double elevation, double azimuth) {
    const Vec3 target = direction_of(elevation, azimuth);
    int best = 0;
    double best_d = 1e300;
    for (int v = 0; v < m.num_vertices; ++v) {
      const double* p = m.mean_shape.data() + v * 3;
      const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      if (n == 0.0) continue;
      const double d = std::pow(p[0] / n - target[0], 2) + std::pow(p[1] / n - target[1], 2) +
                       std::pow(p[2] / n - target[2], 2);
      if (d < best_d) best_d = d, best = v;
    }
    return best;
  };
  LandmarkVertices lm;
  lm.left_eye_outer = nearest(0.13, -0.57);
  lm.left_eye_inner = nearest(0.13, -0.23);
  lm.right_eye_inner = nearest(0.13, 0.23);
  lm.right_eye_outer = nearest(0.13, 0.57);
  lm.nose_tip = nearest(-0.05, 0.0);
  lm.mouth_left = nearest(-0.43, -0.30);
  lm.mouth_right = nearest(-0.43, 0.30);
  lm.chin = nearest(-0.72, 0.0);
  return lm;
}

std::vector<Region> triangle_regions(const MorphableModel& m) {
  std::vector<Region> out(m.triangles.size());
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const Region a = m.regions[m.triangles[t][0]], b = m.regions[m.triangles[t][1]], c = m.regions[m.triangles[t][2]];
    out[t] = (b == c && a != b) ? b : a;
  }
  return out;
}

void save_model(const MorphableModel& m, const std::filesystem::path& path) {
  Archive ar;
  ar.magic = "RAVMM1";
  ar.version = 1;
  ar.header = {static_cast<std::uint32_t>(m.num_vertices), static_cast<std::uint32_t>(m.num_shape),
               static_cast<std::uint32_t>(m.num_expression), static_cast<std::uint32_t>(m.triangles.size())};
  auto f32 = [](std::string name, std::vector<std::int64_t> shape, const std::vector<double>& v) {
    NamedArray a;
    a.name = std::move(name);
    a.shape = std::move(shape);
    a.f32.assign(v.begin(), v.end());
    return a;
  };
  const std::int64_t V = m.num_vertices;
  ar.arrays.push_back(f32("mean_shape", {V, 3}, m.mean_shape));
  ar.arrays.push_back(f32("shape_basis", {m.num_shape, V, 3}, m.shape_basis));
  ar.arrays.push_back(f32("expression_basis", {m.num_expression, V, 3}, m.expression_basis));
  ar.arrays.push_back(f32("vertex_colors", {V, 3}, m.vertex_colors));
  NamedArray tris;
  tris.name = "triangles";
  tris.dtype = NamedArray::DType::i32;
  tris.shape = {static_cast<std::int64_t>(m.triangles.size()), 3};
  for (const auto& t : m.triangles) tris.i32.insert(tris.i32.end(), t.begin(), t.end());
  ar.arrays.push_back(std::move(tris));
  NamedArray labels;
  labels.name = "regions";
  labels.dtype = NamedArray::DType::i32;
  labels.shape = {V};
  for (auto r : m.regions) labels.i32.push_back(static_cast<std::int32_t>(r));
  ar.arrays.push_back(std::move(labels));
  write_archive(path, ar);
}

MorphableModel load_model(const std::filesystem::path& path) {
  const Archive ar = read_archive(path, "RAVMM1");
  if (ar.header.size() != 4) throw Error(ErrorCategory::format_error, "RAVMM1 header must have 4 fields");
  MorphableModel m;
  m.num_vertices = static_cast<int>(ar.header[0]);
  m.num_shape = static_cast<int>(ar.header[1]);
  m.num_expression = static_cast<int>(ar.header[2]);
  const auto& f = ar.get("triangles");
  if (f.dtype != NamedArray::DType::i32 || static_cast<std::uint32_t>(f.shape.at(0)) != ar.header[3])
    throw Error(ErrorCategory::format_error, "triangle array inconsistent with header");
  auto doubles = [&](const char* name) {
    const auto& a = ar.get(name);
    if (a.dtype != NamedArray::DType::f32) throw Error(ErrorCategory::format_error, std::string(name) + " must be f32");
    return std::vector<double>(a.f32.begin(), a.f32.end());
  };
  m.mean_shape = doubles("mean_shape");
  m.shape_basis = doubles("shape_basis");
  m.expression_basis = doubles("expression_basis");
  m.vertex_colors = doubles("vertex_colors");
  for (std::size_t i = 0; i + 2 < f.i32.size(); i += 3) m.triangles.push_back({f.i32[i], f.i32[i + 1], f.i32[i + 2]});
  for (auto r : ar.get("regions").i32) {
    if (r < 0 || r >= kNumRegions) throw Error(ErrorCategory::format_error, "invalid region label in archive");
    m.regions.push_back(static_cast<Region>(r));
  }
  try {
    return make_model(std::move(m));
  } catch (const Error& e) {
    throw Error(ErrorCategory::format_error, std::string("invalid model archive: ") + e.what());
  }
}

}  // namespace rav::morphable
