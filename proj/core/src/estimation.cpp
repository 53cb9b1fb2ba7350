#include "normap/estimation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "normap/error.hpp"
#include "normap/optimize.hpp"

namespace normap {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2 = 0.69314718055994530942;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// Standardised problem: y and the non-intercept columns are rescaled so the
// optimiser sees O(1) quantities whatever the data units.
struct Scaling {
  double y_mean = 0.0;
  double y_sd = 1.0;
  std::array<double, kDesignColumns> col_sd{1.0, 1.0, 1.0, 1.0};
};

double loglik_impl(std::span<const double> y, const DesignMatrix& X, const double* beta,
                   double sigma, double gamma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma) || !(std::abs(gamma) < kMaxSkewness)) {
    return kNegInf;
  }
  const SkewNormalDP unit = cp_to_dp({0.0, sigma, gamma});
  const double shift = unit.location;  // xi - mu
  const double inv_scale = 1.0 / unit.scale;
  const double shape = unit.shape;
  double total = static_cast<double>(y.size()) * (kLog2 - std::log(unit.scale) - kLogSqrt2Pi);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double mu = X(i, 0) * beta[0] + X(i, 1) * beta[1] + X(i, 2) * beta[2] + X(i, 3) * beta[3];
    const double z = (y[static_cast<std::size_t>(i)] - mu - shift) * inv_scale;
    total += -0.5 * z * z + log_std_normal_cdf(shape * z);
  }
  return std::isfinite(total) ? total : kNegInf;
}

double column_sd(const DesignMatrix& X, int c) {
  const double mean = X.col(c).mean();
  return std::sqrt((X.col(c).array() - mean).square().sum() / static_cast<double>(X.rows()));
}

VoxelFit gaussian_fit(std::span<const double> y, const DesignMatrix& X) {
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::VectorXd b = X.colPivHouseholderQr().solve(yv);
  const Eigen::VectorXd r = yv - X * b;
  const double scale_ref = 1.0 + yv.cwiseAbs().maxCoeff();
  const double sd = std::max(std::sqrt(r.squaredNorm() / static_cast<double>(y.size())), 1e-9 * scale_ref);
  VoxelFit fit;
  for (int c = 0; c < kDesignColumns; ++c) fit.beta[static_cast<std::size_t>(c)] = b[c];
  fit.sigma = sd;
  fit.gamma = 0.0;
  fit.loglik = sn_loglik(y, X, fit.beta, fit.sigma, 0.0);
  if (!std::isfinite(fit.loglik)) fit.loglik = std::numeric_limits<double>::lowest();
  fit.converged = false;
  return fit;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

std::string to_string(Group g) {
  switch (g) {
    case Group::CN: return "CN";
    case Group::MCI: return "MCI";
    case Group::AD: return "AD";
    case Group::Unknown: return "UNKNOWN";
  }
  return "UNKNOWN";
}

Group parse_group(const std::string& label) {
  if (label == "CN") return Group::CN;
  if (label == "MCI") return Group::MCI;
  if (label == "AD") return Group::AD;
  if (label == "UNKNOWN" || label.empty()) return Group::Unknown;
  throw ParseError("unknown group label '" + label + "'");
}

std::string to_string(ConstraintMode m) {
  return m == ConstraintMode::SumToZero ? "sum-to-zero" : "sum-to-one";
}

ConstraintMode parse_constraint_mode(const std::string& s) {
  if (s == "sum-to-zero") return ConstraintMode::SumToZero;
  if (s == "sum-to-one") return ConstraintMode::SumToOne;
  throw ParseError("unknown constraint mode '" + s + "' (expected sum-to-zero or sum-to-one)");
}

void CovariateRecord::validate() const {
  if (subject_id.empty()) throw ValidationError("covariates", "empty subject_id");
  if (!(age > 0.0) || !std::isfinite(age)) {
    throw ValidationError("covariates", "subject " + subject_id + ": age must be positive");
  }
  if (sex != 0 && sex != 1) {
    throw ValidationError("covariates", "subject " + subject_id + ": sex must be 0 or 1");
  }
}

DesignRow DesignInfo::row(double age, int sex) const {
  const double a = age - age_center;
  DesignRow r;
  r << 1.0, a, static_cast<double>(sex), a * sex;
  return r;
}

DesignMatrix DesignInfo::matrix(std::span<const CovariateRecord> covars) const {
  DesignMatrix X(static_cast<Eigen::Index>(covars.size()), kDesignColumns);
  for (std::size_t i = 0; i < covars.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = row(covars[i]);
  return X;
}

DesignInfo make_design(std::span<const CovariateRecord> covars) {
  if (covars.empty()) throw DesignError("no covariate records");
  DesignInfo d;
  double sum = 0.0;
  d.age_min = covars.front().age;
  d.age_max = covars.front().age;
  for (const auto& c : covars) {
    c.validate();
    sum += c.age;
    d.age_min = std::min(d.age_min, c.age);
    d.age_max = std::max(d.age_max, c.age);
  }
  d.age_center = sum / static_cast<double>(covars.size());
  return d;
}

double VoxelFit::mean(const DesignRow& x) const {
  return x[0] * beta[0] + x[1] * beta[1] + x[2] * beta[2] + x[3] * beta[3];
}

double sn_loglik(std::span<const double> y, const DesignMatrix& X, const Coefficients& beta,
                 double sigma, double gamma) {
  if (static_cast<Eigen::Index>(y.size()) != X.rows()) {
    throw DesignError("response length does not match design rows");
  }
  if (y.size() < 5) throw DesignError("log-likelihood needs at least 5 observations");
  return loglik_impl(y, X, beta.data(), sigma, gamma);
}

VoxelFit fit_voxel(std::span<const double> y, const DesignMatrix& X, const FitOptions& options) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n != X.rows()) throw DesignError("response length does not match design rows");
  if (y.size() < kMinCohort) {
    std::ostringstream os;
    os << "fit needs at least " << kMinCohort << " subjects, got " << y.size();
    throw DesignError(os.str());
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw DegenerateDataError("response contains non-finite values");
  }
  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  if (*ymin == *ymax) throw DegenerateDataError("response is constant");

  Scaling sc;
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  sc.y_mean = yv.mean();
  sc.y_sd = std::sqrt((yv.array() - sc.y_mean).square().sum() / static_cast<double>(n));
  if (!(sc.y_sd > 0.0)) throw DegenerateDataError("response has zero variance");

  DesignMatrix Xs = X;
  for (int c = 1; c < kDesignColumns; ++c) {
    const double sd = column_sd(X, c);
    if (!(sd > 0.0)) throw DesignError("design column '" + DesignInfo{}.columns[static_cast<std::size_t>(c)] + "' is constant");
    sc.col_sd[static_cast<std::size_t>(c)] = sd;
    Xs.col(c) /= sd;
  }
  const Eigen::ColPivHouseholderQR<DesignMatrix> qr(Xs);
  if (qr.rank() < kDesignColumns) throw DesignError("design matrix is rank deficient");

  std::vector<double> ys(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) ys[i] = (y[i] - sc.y_mean) / sc.y_sd;
  const Eigen::Map<const Eigen::VectorXd> ysv(ys.data(), n);

  // Method-of-moments start.
  const Eigen::VectorXd b0 = qr.solve(ysv);
  const Eigen::VectorXd resid = ysv - Xs * b0;
  const double m2 = resid.squaredNorm() / static_cast<double>(n);
  const double m3 = resid.array().cube().sum() / static_cast<double>(n);
  const double skew0 = std::clamp(m3 / (m2 * std::sqrt(m2)), -0.9 * kMaxSkewness, 0.9 * kMaxSkewness);

  Eigen::VectorXd theta0(kDesignColumns + 2);
  theta0.head<kDesignColumns>() = b0;
  theta0[4] = 0.5 * std::log(m2);
  theta0[5] = std::atanh(skew0 / kSkewnessGuard);

  if (options.initial) {
    const VoxelFit& init = *options.initial;
    for (int c = 0; c < kDesignColumns; ++c) {
      double b = init.beta[static_cast<std::size_t>(c)] * sc.col_sd[static_cast<std::size_t>(c)] / sc.y_sd;
      if (c == 0) b -= sc.y_mean / sc.y_sd;
      theta0[c] = b;
    }
    theta0[4] = std::log(init.sigma / sc.y_sd);
    theta0[5] = std::atanh(std::clamp(init.gamma / kSkewnessGuard, -0.999999, 0.999999));
  }

  const std::span<const double> ys_span(ys);
  const optim::Objective objective = [&](const Eigen::VectorXd& t) {
    const double sigma = std::exp(t[4]);
    const double gamma = kSkewnessGuard * std::tanh(t[5]);
    return -loglik_impl(ys_span, Xs, t.data(), sigma, gamma);
  };

  optim::BfgsOptions bopts;
  bopts.max_iterations = options.max_iterations;
  bopts.relative_tolerance = options.relative_tolerance;
  optim::Result res = optim::minimize_bfgs(objective, theta0, bopts);
  if (!res.converged || !std::isfinite(res.value)) {
    const Eigen::VectorXd start =
        std::isfinite(res.value) && res.value < objective(theta0) ? res.x : theta0;
    const optim::Result nm = optim::minimize_nelder_mead(objective, start);
    if (std::isfinite(nm.value)) {
      res = optim::minimize_bfgs(objective, nm.x, bopts);
      if (!std::isfinite(res.value) || res.value > nm.value) {
        res = nm;
      }
    }
  }
  if (!std::isfinite(res.value) || !res.x.allFinite()) return gaussian_fit(y, X);
  if (res.converged) res = optim::newton_polish(objective, std::move(res));

  VoxelFit fit;
  for (int c = 0; c < kDesignColumns; ++c) {
    double b = res.x[c] * sc.y_sd / sc.col_sd[static_cast<std::size_t>(c)];
    if (c == 0) b += sc.y_mean;
    fit.beta[static_cast<std::size_t>(c)] = b;
  }
  fit.sigma = sc.y_sd * std::exp(res.x[4]);
  const double t = std::tanh(res.x[5]);
  fit.gamma = kSkewnessGuard * t;
  fit.clamped = std::abs(t) > 0.999;
  fit.converged = res.converged;
  fit.loglik = sn_loglik(y, X, fit.beta, fit.sigma, fit.gamma);
  if (!std::isfinite(fit.loglik)) return gaussian_fit(y, X);
  return fit;
}

void GridModel::validate() const {
  if (fits.size() != grid.count()) {
    std::ostringstream os;
    os << "model has " << fits.size() << " fits for " << grid.count() << " grid centers";
    throw ValidationError("model", os.str());
  }
  for (std::size_t j = 0; j < fits.size(); ++j) {
    const auto& f = fits[j];
    bool ok = std::isfinite(f.sigma) && f.sigma > 0.0 && std::isfinite(f.gamma) &&
              std::abs(f.gamma) <= kSkewnessGuard * (1.0 + 1e-12) && std::isfinite(f.loglik);
    for (double b : f.beta) ok = ok && std::isfinite(b);
    if (!ok) {
      std::ostringstream os;
      os << "fit at center " << j << " violates parameter invariants";
      throw ValidationError("model", os.str());
    }
  }
  geometry().validate();
}

GridModel fit_grid(std::span<const VolumetricImage> images,
                   std::span<const CovariateRecord> covars, const GridSpec& grid,
                   const GridFitOptions& options) {
  if (images.size() != covars.size()) {
    std::ostringstream os;
    os << images.size() << " images but " << covars.size() << " covariate records";
    throw ValidationError("cohort", os.str());
  }
  if (images.size() < kMinCohort) {
    std::ostringstream os;
    os << "training cohort needs at least " << kMinCohort << " subjects, got " << images.size();
    throw ValidationError("cohort", os.str());
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i].geometry() == grid.geometry)) {
      throw GeometryError("image for subject " + covars[i].subject_id +
                          " does not match the grid geometry");
    }
    covars[i].validate();
    if (!seen.insert(covars[i].subject_id).second) {
      throw ValidationError("duplicate_subject", "duplicate subject_id " + covars[i].subject_id);
    }
  }

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return covars[a].subject_id < covars[b].subject_id; });
  std::vector<CovariateRecord> sorted;
  sorted.reserve(order.size());
  for (auto i : order) sorted.push_back(covars[i]);

  GridModel model;
  model.grid = grid;
  model.design = make_design(sorted);
  const DesignMatrix X = model.design.matrix(sorted);
  if (Eigen::ColPivHouseholderQR<DesignMatrix>(X).rank() < kDesignColumns) {
    throw DesignError("design matrix is rank deficient (need both sexes and varying age)");
  }
  model.training.n_subjects = sorted.size();
  model.training.seed = options.seed;
  model.rbf.epsilon_mm =
      (2.0 / 3.0) * *std::min_element(grid.spacing_mm.begin(), grid.spacing_mm.end());
  model.fits.resize(grid.count());

  const auto fit_center = [&](std::size_t j) {
    std::vector<double> y(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) y[i] = images[order[i]][grid.centers[j]];
    try {
      model.fits[j] = fit_voxel(y, X);
    } catch (const Error&) {
      // Constant or non-finite series at this center; keep the run total.
      model.fits[j] = gaussian_fit(y, X);
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(grid.count())));
  if (jobs == 1) {
    for (std::size_t j = 0; j < grid.count(); ++j) fit_center(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t j = next++; j < grid.count(); j = next++) fit_center(j);
      });
    }
  }

  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& c : sorted) {
    h = fnv1a(h, c.subject_id.data(), c.subject_id.size());
    h = fnv1a(h, &c.age, sizeof c.age);
    h = fnv1a(h, &c.sex, sizeof c.sex);
  }
  for (auto i : order) {
    for (auto c : grid.centers) {
      const double v = images[i][c];
      h = fnv1a(h, &v, sizeof v);
    }
  }
  std::ostringstream os;
  os << std::hex << h;
  model.training.input_digest = os.str();
  return model;
}

}  // namespace normap
