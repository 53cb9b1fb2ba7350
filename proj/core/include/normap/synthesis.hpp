#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "normap/estimation.hpp"
#include "normap/geometry.hpp"

namespace normap {

/// Spherical region with a cos^2 taper outside `radius_mm`.
struct Bump {
  Point3 center_mm{20.0, 20.0, 28.0};
  double radius_mm = 6.0;
  double taper_mm = 4.0;

  /// 1 inside the radius, smoothly down to 0 at radius + taper.
  double weight(const Point3& p) const;
  bool contains(const Point3& p) const;
};

/// base + gradient . (p - origin) + bump * w(p)
struct FieldSpec {
  double base = 0.0;
  std::array<double, 3> gradient{0.0, 0.0, 0.0};
  double bump = 0.0;

  double value(const Point3& p, const Point3& origin, double bump_weight) const;
};

inline constexpr std::size_t kFieldCount = 6;
inline constexpr std::array<const char*, kFieldCount> kFieldNames{
    "beta0", "beta_age", "beta_sex", "beta_int", "sigma", "gamma"};

struct SyntheticSpec {
  Geometry geometry{{48, 48, 48}, {1.0, 1.0, 1.0}};
  Point3 mask_center_mm{23.5, 23.5, 23.5};
  double mask_radius_mm = 20.0;
  Bump bump;
  /// beta0, beta_age, beta_sex, beta_int, sigma, gamma
  std::array<FieldSpec, kFieldCount> fields{
      FieldSpec{1.0, {0.004, -0.003, 0.002}, 0.35},
      FieldSpec{-0.002, {0.0, 0.0, 0.0}, 0.012},
      FieldSpec{0.02, {0.0, 0.0, 0.0}, 0.0},
      FieldSpec{0.0, {0.0, 0.0, 0.0}, 0.0},
      FieldSpec{0.05, {0.0, 0.0, 0.0}, 0.05},
      FieldSpec{0.2, {0.0, 0.0, 0.0}, 0.45},
  };
  /// Age at which beta0 is the mean (the age slope pivots here).
  double age_reference = 72.5;
  std::size_t n_normals = 500;
  std::size_t n_patients = 0;
  double age_min = 55.0;
  double age_max = 90.0;
  /// Patients get +shift_sd * sigma(v) inside the bump radius.
  double disease_shift_sd = 2.0;
  std::uint64_t seed = 20240601;
  std::string id_prefix = "sub";

  /// Throws ValidationError when a field leaves its admissible range.
  void validate() const;
};

struct GroundTruth {
  Geometry geometry;
  double age_reference = 0.0;
  /// Binary sphere to build the mask from.
  VolumetricImage mask_template;
  /// Parameter fields in kFieldNames order.
  std::array<VolumetricImage, kFieldCount> fields;
  /// 1 where patients are perturbed.
  VolumetricImage disease_region;

  double mean(std::size_t voxel, double age, int sex) const;
  SkewNormalCP cp(std::size_t voxel, double age, int sex) const;
};

struct Cohort {
  std::vector<VolumetricImage> images;
  std::vector<CovariateRecord> covariates;
  GroundTruth truth;
};

/// Normals first (group CN), then patients (group AD). Deterministic per seed.
Cohort generate_cohort(const SyntheticSpec& spec, unsigned jobs = 1);

/// Ground-truth fields only, no subjects.
GroundTruth make_ground_truth(const SyntheticSpec& spec);

/// key = value text; '#' starts a comment. Unknown keys are rejected.
SyntheticSpec parse_synthetic_spec(std::istream& in, const std::string& source = "<stream>");
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);
std::string format_synthetic_spec(const SyntheticSpec& spec);

}  // namespace normap
