#include "normap/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "normap/error.hpp"
#include "normap/quadrature.hpp"
#include "normap/rng.hpp"

namespace normap {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kLog2 = 0.69314718055994530942;

// Acklam's rational approximation on (0, 0.5]; relative error ~1e-9 before refinement.
double quantile_lower_half(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }

  // One Halley step against the erfc-based CDF.
  const double e = 0.5 * std::erfc(-x * kInvSqrt2) - p;
  const double u = e * std::sqrt(2.0 * kPi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// T(h, a) for h >= 0, a >= 0 via the substitution x = tan(t), which maps the
// integrand onto a bounded interval with a bounded, smooth integrand.
double owen_t_nonneg(double h, double a) {
  if (a == 0.0) return 0.0;
  const double upper = std::atan(a);
  if (h == 0.0) return upper / (2.0 * kPi);
  const double half_h2 = 0.5 * h * h;
  auto integrand = [half_h2](double t) {
    const double c = std::cos(t);
    return std::exp(-half_h2 / (c * c));
  };
  return quad::integrate(integrand, 0.0, upper, 1e-13) / (2.0 * kPi);
}

// CDF of the standard skew-normal SN(0, 1, shape).
double standard_sn_cdf(double z, double shape) {
  const double f = std_normal_cdf(z) - 2.0 * owen_t(z, shape);
  return std::clamp(f, 0.0, 1.0);
}

double standard_sn_pdf(double z, double shape) {
  return 2.0 * std_normal_pdf(z) * std_normal_cdf(shape * z);
}

}  // namespace

SkewnessOutOfRange::SkewnessOutOfRange(double gamma)
    : ValidationError("skewness_out_of_range",
                      [gamma] {
                        std::ostringstream os;
                        os.precision(17);
                        os << "skewness " << gamma << " outside the attainable range (-"
                           << kMaxSkewness << ", " << kMaxSkewness << ")";
                        return os.str();
                      }()),
      gamma_(gamma) {}

void SkewNormalDP::validate() const {
  if (!std::isfinite(location) || !std::isfinite(scale) || !std::isfinite(shape)) {
    throw DomainError("skew-normal DP parameters must be finite");
  }
  if (!(scale > 0.0)) throw DomainError("skew-normal scale must be positive");
}

void SkewNormalCP::validate() const {
  if (!std::isfinite(mean) || !std::isfinite(sd) || !std::isfinite(skewness)) {
    throw DomainError("skew-normal CP parameters must be finite");
  }
  if (!(sd > 0.0)) throw DomainError("skew-normal standard deviation must be positive");
  if (!(std::abs(skewness) < kMaxSkewness)) throw SkewnessOutOfRange(skewness);
}

double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double log_std_normal_cdf(double x) {
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
  if (x > -37.0) return std::log(0.5 * std::erfc(-x * kInvSqrt2));
  // Asymptotic expansion of the Mills ratio.
  const double r = 1.0 / (x * x);
  return -0.5 * x * x - std::log(-x) - kLogSqrt2Pi + std::log1p(r * (-1.0 + r * (3.0 - 15.0 * r)));
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    std::ostringstream os;
    os << "normal quantile requires p in (0, 1), got " << p;
    throw DomainError(os.str());
  }
  if (p > 0.5) return -quantile_lower_half(1.0 - p);
  if (p == 0.5) return 0.0;
  return quantile_lower_half(p);
}

double owen_t(double h, double a) {
  const double value = owen_t_nonneg(std::abs(h), std::abs(a));
  return a < 0.0 ? -value : value;
}

double sn_pdf(double x, const SkewNormalDP& dp) {
  const double z = (x - dp.location) / dp.scale;
  return standard_sn_pdf(z, dp.shape) / dp.scale;
}

double sn_log_pdf(double x, const SkewNormalDP& dp) {
  const double z = (x - dp.location) / dp.scale;
  return kLog2 - std::log(dp.scale) - kLogSqrt2Pi - 0.5 * z * z +
         log_std_normal_cdf(dp.shape * z);
}

double sn_cdf(double x, const SkewNormalDP& dp) {
  return standard_sn_cdf((x - dp.location) / dp.scale, dp.shape);
}

double sn_quantile(double p, const SkewNormalDP& dp) {
  if (!(p > 0.0 && p < 1.0)) {
    std::ostringstream os;
    os << "skew-normal quantile requires p in (0, 1), got " << p;
    throw DomainError(os.str());
  }
  dp.validate();
  const double shape = dp.shape;
  if (shape == 0.0) return dp.location + dp.scale * std_normal_quantile(p);

  const SkewNormalCP moments = dp_to_cp({0.0, 1.0, shape});
  double z = moments.mean + moments.sd * std_normal_quantile(p);

  // Bracket the root, then safeguarded Newton.
  double lo = z - 1.0, hi = z + 1.0;
  for (double step = 1.0; standard_sn_cdf(lo, shape) > p; step *= 2.0) lo -= step;
  for (double step = 1.0; standard_sn_cdf(hi, shape) < p; step *= 2.0) hi += step;
  z = std::clamp(z, lo, hi);

  for (int it = 0; it < 200; ++it) {
    const double diff = standard_sn_cdf(z, shape) - p;
    if (diff == 0.0) break;
    if (diff > 0.0) hi = z; else lo = z;
    const double dens = standard_sn_pdf(z, shape);
    double next = dens > 0.0 ? z - diff / dens : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double delta = std::abs(next - z);
    z = next;
    if (delta <= 1e-15 * std::max(1.0, std::abs(z)) || hi - lo <= 1e-15 * std::max(1.0, std::abs(z))) {
      break;
    }
  }
  return dp.location + dp.scale * z;
}

SkewNormalDP cp_to_dp(const SkewNormalCP& cp) {
  cp.validate();
  const double b = std::sqrt(2.0 / kPi);
  const double r = std::cbrt(2.0 * cp.skewness / (4.0 - kPi));
  const double mu_z = r / std::sqrt(1.0 + r * r);
  const double delta = mu_z / b;
  const double shape = delta / std::sqrt(1.0 - delta * delta);
  const double scale = cp.sd / std::sqrt(1.0 - mu_z * mu_z);
  return {cp.mean - scale * mu_z, scale, shape};
}

SkewNormalCP dp_to_cp(const SkewNormalDP& dp) {
  dp.validate();
  const double b = std::sqrt(2.0 / kPi);
  const double delta = dp.shape / std::sqrt(1.0 + dp.shape * dp.shape);
  const double mu_z = b * delta;
  const double var_z = 1.0 - mu_z * mu_z;
  const double gamma = 0.5 * (4.0 - kPi) * mu_z * mu_z * mu_z / (var_z * std::sqrt(var_z));
  return {dp.location + dp.scale * mu_z, dp.scale * std::sqrt(var_z), gamma};
}

std::vector<double> sn_sample(const SkewNormalDP& dp, std::size_t n, std::uint64_t seed) {
  dp.validate();
  if (n == 0) throw DomainError("sample size must be at least 1");
  const double delta = dp.shape / std::sqrt(1.0 + dp.shape * dp.shape);
  CounterRng rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) {
    double u0 = 0.0, v = 0.0;
    rng.normal_pair(u0, v);
    x = dp.location + dp.scale * skew_normal_from_pair(u0, v, delta);
  }
  return out;
}

}  // namespace normap
