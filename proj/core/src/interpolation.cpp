#include "normap/interpolation.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "normap/error.hpp"

namespace normap {

namespace {

// Below this reciprocal condition number the interpolation constraints can no
// longer be met to ~1e-8 relative accuracy.
constexpr double kMinRcond = 1e-13;

// Entries of the voxel-by-center kernel matrix we are willing to cache.
constexpr std::size_t kMaxCachedKernel = std::size_t{1} << 24;

// Factorised augmented system [K 1; 1' 0] for one set of centers.
struct KernelSystem {
  Eigen::MatrixXd kernel;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd k1;  // K^{-1} 1
  double k1_sum = 0.0;
  double rcond = 0.0;

  KernelSystem(std::span<const Point3> centers, double epsilon_mm) {
    if (!(epsilon_mm > 0.0) || !std::isfinite(epsilon_mm)) {
      throw DomainError("RBF bandwidth must be positive");
    }
    if (centers.size() < 2) throw DomainError("RBF interpolation needs at least 2 centers");
    const auto n = static_cast<Eigen::Index>(centers.size());
    const double scale = -0.5 / (epsilon_mm * epsilon_mm);
    kernel.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      kernel(j, j) = 1.0;
      for (Eigen::Index l = 0; l < j; ++l) {
        const double h = std::exp(scale * squared_distance(centers[static_cast<std::size_t>(j)],
                                                           centers[static_cast<std::size_t>(l)]));
        kernel(j, l) = h;
        kernel(l, j) = h;
      }
    }
    // The Gaussian kernel matrix is positive definite for distinct centers,
    // so the constant is eliminated through a Cholesky factorisation of K.
    llt.compute(kernel);
    rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    if (!(rcond >= kMinRcond)) {
      const double cond = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
      std::ostringstream os;
      os << "RBF system is singular or ill-conditioned (estimated condition number " << cond
         << "); check for duplicate centers or reduce epsilon";
      throw ConditioningError(os.str(), cond);
    }
    k1 = llt.solve(Eigen::VectorXd::Ones(n));
    k1_sum = k1.sum();
  }

  // Returns weights and constant with sum(b) = target.
  std::pair<Eigen::VectorXd, double> solve(std::span<const double> values, double target) const {
    const auto n = kernel.rows();
    if (static_cast<Eigen::Index>(values.size()) != n) {
      throw DomainError("RBF values do not match centers");
    }
    const Eigen::Map<const Eigen::VectorXd> z(values.data(), n);
    const Eigen::VectorXd kz = llt.solve(z);
    double b0 = (kz.sum() - target) / k1_sum;
    Eigen::VectorXd b = kz - b0 * k1;

    // One step of iterative refinement on the augmented system.
    const Eigen::VectorXd r = z - kernel * b - Eigen::VectorXd::Constant(n, b0);
    const double rs = target - b.sum();
    const Eigen::VectorXd kr = llt.solve(r);
    const double db0 = (kr.sum() - rs) / k1_sum;
    b += kr - db0 * k1;
    b0 += db0;
    return {std::move(b), b0};
  }
};

double target_sum(ConstraintMode mode) { return mode == ConstraintMode::SumToZero ? 0.0 : 1.0; }

}  // namespace

double rbf_kernel(double distance_mm, double epsilon_mm) {
  const double r = distance_mm / epsilon_mm;
  return std::exp(-0.5 * r * r);
}

RbfInterpolator::RbfInterpolator(std::vector<Point3> centers, Eigen::VectorXd weights,
                                 double constant, double epsilon_mm, ConstraintMode mode)
    : centers_(std::move(centers)),
      weights_(std::move(weights)),
      constant_(constant),
      epsilon_(epsilon_mm),
      mode_(mode) {
  if (!(epsilon_ > 0.0)) throw DomainError("RBF bandwidth must be positive");
  if (static_cast<Eigen::Index>(centers_.size()) != weights_.size()) {
    throw DomainError("RBF weights do not match centers");
  }
}

double RbfInterpolator::evaluate(const Point3& p) const {
  const double scale = -0.5 / (epsilon_ * epsilon_);
  double s = constant_;
  for (std::size_t l = 0; l < centers_.size(); ++l) {
    s += weights_[static_cast<Eigen::Index>(l)] * std::exp(scale * squared_distance(p, centers_[l]));
  }
  return s;
}

RbfInterpolator rbf_fit(std::span<const Point3> centers, std::span<const double> values,
                        double epsilon_mm, ConstraintMode mode) {
  if (centers.size() != values.size()) throw DomainError("RBF values do not match centers");
  const KernelSystem sys(centers, epsilon_mm);
  auto [b, b0] = sys.solve(values, target_sum(mode));
  RbfInterpolator out(std::vector<Point3>(centers.begin(), centers.end()), std::move(b), b0,
                      epsilon_mm, mode);
  out.set_rcond(sys.rcond);
  return out;
}

std::vector<double> rbf_predict(const RbfInterpolator& interp, std::span<const Point3> points) {
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = interp.evaluate(points[i]);
  return out;
}

struct FieldInterpolator::Impl {
  GridSpec grid;
  BrainMask mask;
  double epsilon;
  ConstraintMode mode;
  std::vector<Point3> centers;
  KernelSystem system;
  Eigen::MatrixXd evaluation;  // mask voxels x centers, empty when too large

  Impl(const GridSpec& g, const BrainMask& m, double eps, ConstraintMode md)
      : grid(g), mask(m), epsilon(eps), mode(md), centers(g.center_positions()), system(centers, eps) {
    if (!(mask.geometry() == grid.geometry)) throw GeometryError("mask and grid geometry differ");
    const auto rows = static_cast<Eigen::Index>(mask.count());
    const auto cols = static_cast<Eigen::Index>(centers.size());
    if (mask.count() * centers.size() <= kMaxCachedKernel) {
      const double scale = -0.5 / (eps * eps);
      evaluation.resize(rows, cols);
      const Geometry& geo = mask.geometry();
      for (Eigen::Index i = 0; i < rows; ++i) {
        const Point3 p = geo.position(mask.voxels()[static_cast<std::size_t>(i)]);
        for (Eigen::Index l = 0; l < cols; ++l) {
          evaluation(i, l) = std::exp(scale * squared_distance(p, centers[static_cast<std::size_t>(l)]));
        }
      }
    }
  }
};

FieldInterpolator::FieldInterpolator(const GridSpec& grid, const BrainMask& mask,
                                     double epsilon_mm, ConstraintMode mode)
    : impl_(std::make_unique<Impl>(grid, mask, epsilon_mm, mode)) {}
FieldInterpolator::~FieldInterpolator() = default;
FieldInterpolator::FieldInterpolator(FieldInterpolator&&) noexcept = default;
FieldInterpolator& FieldInterpolator::operator=(FieldInterpolator&&) noexcept = default;

const BrainMask& FieldInterpolator::mask() const { return impl_->mask; }
const GridSpec& FieldInterpolator::grid() const { return impl_->grid; }

RbfInterpolator FieldInterpolator::fit(std::span<const double> values) const {
  auto [b, b0] = impl_->system.solve(values, target_sum(impl_->mode));
  RbfInterpolator out(impl_->centers, std::move(b), b0, impl_->epsilon, impl_->mode);
  out.set_rcond(impl_->system.rcond);
  return out;
}

std::vector<double> FieldInterpolator::on_mask(std::span<const double> values) const {
  const RbfInterpolator interp = fit(values);
  std::vector<double> out(impl_->mask.count());
  if (impl_->evaluation.size() > 0) {
    Eigen::Map<Eigen::VectorXd> o(out.data(), static_cast<Eigen::Index>(out.size()));
    o.noalias() = impl_->evaluation * interp.weights();
    o.array() += interp.constant();
  } else {
    const Geometry& g = impl_->mask.geometry();
    const auto& voxels = impl_->mask.voxels();
    for (std::size_t i = 0; i < voxels.size(); ++i) out[i] = interp.evaluate(g.position(voxels[i]));
  }
  return out;
}

VolumetricImage FieldInterpolator::field(std::span<const double> values) const {
  const auto vals = on_mask(values);
  VolumetricImage img(impl_->mask.geometry(), 0.0);
  const auto& voxels = impl_->mask.voxels();
  for (std::size_t i = 0; i < voxels.size(); ++i) img[voxels[i]] = vals[i];
  return img;
}

std::vector<double> interpolate_on_mask(const GridSpec& grid, std::span<const double> values,
                                        const BrainMask& mask, double epsilon_mm,
                                        ConstraintMode mode) {
  if (values.size() != grid.count()) throw DomainError("field values do not match grid centers");
  return FieldInterpolator(grid, mask, epsilon_mm, mode).on_mask(values);
}

VolumetricImage interpolate_field(const GridSpec& grid, std::span<const double> values,
                                  const BrainMask& mask, double epsilon_mm, ConstraintMode mode) {
  if (values.size() != grid.count()) throw DomainError("field values do not match grid centers");
  return FieldInterpolator(grid, mask, epsilon_mm, mode).field(values);
}

}  // namespace normap
