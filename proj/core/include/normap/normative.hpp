#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "normap/estimation.hpp"
#include "normap/geometry.hpp"
#include "normap/interpolation.hpp"

namespace normap {

/// U values are kept inside [kUClamp, 1 - kUClamp] so z stays finite.
inline constexpr double kUClamp = 1e-15;

/// Subject-level standard-normal deviation map.
struct ZMap {
  std::string subject_id;
  CovariateRecord covariates;
  Geometry geometry;
  /// z at mask voxels, in mask order.
  std::vector<double> values;
  /// z at the model's grid centers, in center order.
  std::vector<double> center_values;
  /// Digest of the model the map was computed from.
  std::string model_id;

  VolumetricImage to_image(const BrainMask& mask) const;
};

/// How whole-mask z values are obtained.
enum class ZMapMode {
  /// z computed at grid centers, then interpolated (the normal workflow).
  GridThenInterpolate,
  /// Parameters interpolated to every voxel, then transformed voxelwise.
  InterpolateParameters,
};

enum class Tail { Both, Upper, Lower };

std::string to_string(Tail t);
Tail parse_tail(const std::string& s);

struct DeviationScore {
  std::string subject_id;
  Group group = Group::Unknown;
  double q = 0.0;
  double value = 0.0;
  std::size_t n_tail = 0;
};

/// Parameter functions interpolated over the mask.
struct ParameterMaps {
  static constexpr std::array<const char*, 6> kNames{"beta0", "beta_age", "beta_sex",
                                                     "beta_int", "sigma", "gamma"};
  std::array<VolumetricImage, 6> maps;

  const VolumetricImage& operator[](std::size_t i) const { return maps[i]; }
};

struct GroupSummary {
  Group group = Group::Unknown;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct CohortScores {
  /// One entry per subject, ordered by subject_id.
  std::vector<DeviationScore> scores;
  /// Non-empty groups in CN, MCI, AD, UNKNOWN order.
  std::vector<GroupSummary> groups;
};

/// Latent uniform value of y under the voxel's fitted distribution.
double voxel_u(double y, const VoxelFit& fit, const DesignRow& x);
double voxel_u(double y, const VoxelFit& fit, const CovariateRecord& covariates,
               const DesignInfo& design);

/// z at every grid center for one subject.
std::vector<double> center_z(const VolumetricImage& img, const CovariateRecord& covariates,
                             const GridModel& model);

/// Model plus mask with a cached interpolation system; use this when mapping
/// many subjects against the same model.
class NormativeMapper {
 public:
  NormativeMapper(const GridModel& model, const BrainMask& mask, double epsilon_mm,
                  ConstraintMode mode);
  /// Uses the bandwidth and constraint stored in the model.
  NormativeMapper(const GridModel& model, const BrainMask& mask);

  const GridModel& model() const { return *model_; }
  const BrainMask& mask() const { return interp_.mask(); }

  ZMap zmap(const VolumetricImage& img, const CovariateRecord& covariates,
            ZMapMode mode = ZMapMode::GridThenInterpolate) const;
  ParameterMaps parameter_maps() const;
  VolumetricImage predict_mean(double age, int sex) const;
  VolumetricImage age_effect(int sex) const;

 private:
  std::shared_ptr<const GridModel> model_;
  FieldInterpolator interp_;
};

ZMap subject_zmap(const VolumetricImage& img, const CovariateRecord& covariates,
                  const GridModel& model, const BrainMask& mask, double epsilon_mm,
                  ConstraintMode mode, ZMapMode zmode = ZMapMode::GridThenInterpolate);

/// Mean of the tail above the empirical q-quantile. Values are ranked after
/// the tail transform (|z|, z or -z); the tail is every order statistic with
/// rank above ceil(q n), and always holds at least the largest value.
double tail_mean(std::span<const double> z, double q, Tail tail, std::size_t* n_tail = nullptr);

DeviationScore deviation_index(const ZMap& zmap, double q, Tail tail = Tail::Both);

ParameterMaps parameter_maps(const GridModel& model, const BrainMask& mask, double epsilon_mm,
                             ConstraintMode mode);
VolumetricImage predict_mean(const GridModel& model, double age, int sex, const BrainMask& mask,
                             double epsilon_mm, ConstraintMode mode);
VolumetricImage age_effect_map(const GridModel& model, int sex, const BrainMask& mask,
                               double epsilon_mm, ConstraintMode mode);

/// True when age lies within the training cohort's age range.
bool within_training_support(const GridModel& model, double age);

CohortScores score_cohort(std::span<const ZMap> zmaps, double q, Tail tail = Tail::Both);

}  // namespace normap
