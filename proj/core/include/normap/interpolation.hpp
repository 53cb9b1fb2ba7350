#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <vector>

#include "normap/estimation.hpp"
#include "normap/geometry.hpp"

namespace normap {

/// Gaussian kernel exp(-d^2 / (2 eps^2)).
double rbf_kernel(double distance_mm, double epsilon_mm);

/// Gaussian RBF interpolant plus a constant term:
///   s(v) = b0 + sum_l b_l h(|v - c_l|),
/// with the weights constrained to sum to 0 or 1.
class RbfInterpolator {
 public:
  RbfInterpolator() = default;
  RbfInterpolator(std::vector<Point3> centers, Eigen::VectorXd weights, double constant,
                  double epsilon_mm, ConstraintMode mode);

  const std::vector<Point3>& centers() const { return centers_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  double constant() const { return constant_; }
  double epsilon() const { return epsilon_; }
  ConstraintMode mode() const { return mode_; }
  /// Reciprocal condition estimate of the kernel matrix at fit time.
  double rcond() const { return rcond_; }
  void set_rcond(double r) { rcond_ = r; }

  double evaluate(const Point3& p) const;

 private:
  std::vector<Point3> centers_;
  Eigen::VectorXd weights_;
  double constant_ = 0.0;
  double epsilon_ = 1.0;
  ConstraintMode mode_ = ConstraintMode::SumToZero;
  double rcond_ = 1.0;
};

/// Solves the augmented interpolation system. Throws ConditioningError when
/// the kernel matrix is numerically singular.
RbfInterpolator rbf_fit(std::span<const Point3> centers, std::span<const double> values,
                        double epsilon_mm, ConstraintMode mode = ConstraintMode::SumToZero);

std::vector<double> rbf_predict(const RbfInterpolator& interp, std::span<const Point3> points);

/// Reusable interpolation from a fixed set of grid centers onto the voxels of
/// a mask. The kernel factorisation (and, for small problems, the
/// voxel-by-center kernel matrix) is computed once and shared by every field.
class FieldInterpolator {
 public:
  FieldInterpolator(const GridSpec& grid, const BrainMask& mask, double epsilon_mm,
                    ConstraintMode mode = ConstraintMode::SumToZero);
  ~FieldInterpolator();
  FieldInterpolator(FieldInterpolator&&) noexcept;
  FieldInterpolator& operator=(FieldInterpolator&&) noexcept;

  RbfInterpolator fit(std::span<const double> values) const;
  /// Interpolated values at mask voxels, in mask order.
  std::vector<double> on_mask(std::span<const double> values) const;
  /// Interpolated field; 0 outside the mask.
  VolumetricImage field(std::span<const double> values) const;

  const BrainMask& mask() const;
  const GridSpec& grid() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Fits on the grid centers and evaluates at every mask voxel. Voxels outside
/// the mask are 0.
VolumetricImage interpolate_field(const GridSpec& grid, std::span<const double> values,
                                  const BrainMask& mask, double epsilon_mm,
                                  ConstraintMode mode = ConstraintMode::SumToZero);

/// Same as interpolate_field but returns the values at mask voxels only, in
/// mask order.
std::vector<double> interpolate_on_mask(const GridSpec& grid, std::span<const double> values,
                                        const BrainMask& mask, double epsilon_mm,
                                        ConstraintMode mode = ConstraintMode::SumToZero);

}  // namespace normap
