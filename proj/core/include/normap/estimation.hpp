#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "normap/distribution.hpp"
#include "normap/geometry.hpp"

namespace normap {

enum class Group { CN, MCI, AD, Unknown };

std::string to_string(Group g);
/// Accepts CN, MCI, AD, UNKNOWN and the empty string (UNKNOWN).
Group parse_group(const std::string& label);

struct CovariateRecord {
  std::string subject_id;
  double age = 0.0;  // years
  int sex = 0;       // 0 = female, 1 = male
  Group group = Group::Unknown;

  void validate() const;
};

inline constexpr int kDesignColumns = 4;
using DesignRow = Eigen::Matrix<double, 1, kDesignColumns>;
using DesignMatrix = Eigen::Matrix<double, Eigen::Dynamic, kDesignColumns>;
using Coefficients = std::array<double, kDesignColumns>;

/// How covariates map onto design columns [1, age - age_center, sex, (age - age_center) * sex].
struct DesignInfo {
  std::array<std::string, kDesignColumns> columns{"intercept", "age", "sex", "age:sex"};
  double age_center = 0.0;
  /// Training support, used to warn on extrapolation.
  double age_min = 0.0;
  double age_max = 0.0;

  DesignRow row(double age, int sex) const;
  DesignRow row(const CovariateRecord& c) const { return row(c.age, c.sex); }
  DesignMatrix matrix(std::span<const CovariateRecord> covars) const;
};

/// Centres age at the cohort mean and records the training age range.
DesignInfo make_design(std::span<const CovariateRecord> covars);

struct VoxelFit {
  Coefficients beta{};
  double sigma = 1.0;
  double gamma = 0.0;
  double loglik = 0.0;
  bool converged = false;
  bool clamped = false;

  double mean(const DesignRow& x) const;
  SkewNormalCP cp(const DesignRow& x) const { return {mean(x), sigma, gamma}; }
};

/// Largest |skewness| the estimator will return.
inline const double kSkewnessGuard = 0.995 * kMaxSkewness;

/// Sum of skew-normal log densities with mean X * beta. Returns -infinity
/// when the parameters are degenerate.
double sn_loglik(std::span<const double> y, const DesignMatrix& X, const Coefficients& beta,
                 double sigma, double gamma);

struct FitOptions {
  int max_iterations = 500;
  double relative_tolerance = 1e-10;
  /// Optional starting point in place of the least-squares start.
  const VoxelFit* initial = nullptr;
};

/// Maximum-likelihood fit in the centred parameterisation.
VoxelFit fit_voxel(std::span<const double> y, const DesignMatrix& X, const FitOptions& options = {});

struct TrainingInfo {
  std::size_t n_subjects = 0;
  std::uint64_t seed = 0;
  /// FNV-1a digest over the canonical training inputs.
  std::string input_digest;
};

enum class ConstraintMode { SumToZero, SumToOne };

std::string to_string(ConstraintMode m);
ConstraintMode parse_constraint_mode(const std::string& s);

struct RbfDefaults {
  double epsilon_mm = 16.0 / 3.0;
  ConstraintMode mode = ConstraintMode::SumToZero;
};

struct GridModel {
  GridSpec grid;
  DesignInfo design;
  std::vector<VoxelFit> fits;
  TrainingInfo training;
  RbfDefaults rbf;

  const Geometry& geometry() const { return grid.geometry; }
  /// Throws ValidationError if the fit list or any fit violates its invariants.
  void validate() const;
};

struct GridFitOptions {
  unsigned jobs = 1;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMinCohort = 20;

/// Fits every grid center. images[i] belongs to covars[i]. Subjects are
/// processed in subject_id order so the result does not depend on input order.
GridModel fit_grid(std::span<const VolumetricImage> images,
                   std::span<const CovariateRecord> covars, const GridSpec& grid,
                   const GridFitOptions& options = {});

}  // namespace normap
