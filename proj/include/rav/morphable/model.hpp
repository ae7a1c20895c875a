#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "rav/kernels/raster.hpp"

namespace rav::morphable {

enum class Region : std::uint8_t { skin = 0, left_eye, right_eye, eyebrow, mouth, other };
inline constexpr int kNumRegions = 6;

std::string_view region_name(Region region);
/// Throws contract_violation for unknown labels.
Region parse_region(std::string_view name);

/// Linear face model: mean + sum_i alpha_i S_i + sum_j beta_j E_j.
///
/// Arrays are flattened row-major: mean_shape is V x 3, shape_basis is
/// K_s x V x 3, expression_basis is K_e x V x 3. Build instances with
/// make_model(), which validates topology and orthogonalises both bases.
struct MorphableModel {
  int num_vertices = 0;
  int num_shape = 0;
  int num_expression = 0;
  std::vector<double> mean_shape;
  std::vector<double> shape_basis;
  std::vector<double> expression_basis;
  std::vector<double> vertex_colors;
  std::vector<kernels::Triangle> triangles;
  std::vector<Region> regions;

  int num_triangles() const { return static_cast<int>(triangles.size()); }
};

struct CoefficientPair {
  std::vector<double> shape;       // alpha, K_s
  std::vector<double> expression;  // beta, K_e

  static CoefficientPair zeros(const MorphableModel& model);
};

inline constexpr double kDefaultCoeffClip = 3.0;

/// Validates, then Gram-Schmidt orthogonalises each basis in place.
MorphableModel make_model(MorphableModel raw);

/// Topology and orthogonality checks; throws on violation.
void validate(const MorphableModel& model);
/// Finite entries with |value| <= clip and dimensions matching `model`.
void validate(const CoefficientPair& coeffs, const MorphableModel& model, double clip = kDefaultCoeffClip);
CoefficientPair clip_coefficients(CoefficientPair coeffs, double clip = kDefaultCoeffClip);

/// Vertex positions, V x 3.
std::vector<double> evaluate(const MorphableModel& model, const CoefficientPair& coeffs);

/// Procedural head: ellipsoid-like closed mesh with angular-sector regions and
/// orthogonalised smooth random bases. Deterministic in `seed`; the mean shape,
/// colours and regions are bilaterally symmetric about x = 0.
MorphableModel make_synthetic_model(std::uint64_t seed, int num_vertices = 6000, int num_shape = 10,
                                    int num_expression = 8);

/// Vertex ids used as oracle landmarks; fixed by the mean-shape geometry.
struct LandmarkVertices {
  int left_eye_outer, left_eye_inner, right_eye_inner, right_eye_outer;
  int nose_tip, mouth_left, mouth_right, chin;
};
LandmarkVertices landmark_vertices(const MorphableModel& model);

/// Label per triangle: the majority vertex label, or the first vertex's label
/// when all three differ.
std::vector<Region> triangle_regions(const MorphableModel& model);

void save_model(const MorphableModel& model, const std::filesystem::path& path);
MorphableModel load_model(const std::filesystem::path& path);

}  // namespace rav::morphable
