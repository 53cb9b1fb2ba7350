#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

namespace normap {

/// Upper bound on |skewness| attainable by a skew-normal distribution,
/// sqrt(2)(4 - pi) / (pi - 2)^{3/2}.
inline const double kMaxSkewness =
    std::numbers::sqrt2 * (4.0 - std::numbers::pi) /
    ((std::numbers::pi - 2.0) * std::sqrt(std::numbers::pi - 2.0));

/// Direct parameterisation: location, scale, shape.
struct SkewNormalDP {
  double location = 0.0;
  double scale = 1.0;
  double shape = 0.0;

  /// Throws DomainError unless scale > 0 and every field is finite.
  void validate() const;
};

/// Centred parameterisation: mean, standard deviation, skewness.
struct SkewNormalCP {
  double mean = 0.0;
  double sd = 1.0;
  double skewness = 0.0;

  void validate() const;
};

double std_normal_pdf(double x);
double std_normal_cdf(double x);
/// log Phi(x), accurate far into the lower tail.
double log_std_normal_cdf(double x);
/// Inverse of std_normal_cdf; throws DomainError for p outside (0, 1).
double std_normal_quantile(double p);

/// Owen's T function, (1/2pi) * integral_0^a exp(-h^2 (1+x^2)/2) / (1+x^2) dx.
double owen_t(double h, double a);

double sn_pdf(double x, const SkewNormalDP& dp);
double sn_log_pdf(double x, const SkewNormalDP& dp);
double sn_cdf(double x, const SkewNormalDP& dp);
double sn_quantile(double p, const SkewNormalDP& dp);

/// Throws SkewnessOutOfRange when |skewness| >= kMaxSkewness.
SkewNormalDP cp_to_dp(const SkewNormalCP& cp);
SkewNormalCP dp_to_cp(const SkewNormalDP& dp);

/// n deterministic draws from SN(dp) for the given seed.
std::vector<double> sn_sample(const SkewNormalDP& dp, std::size_t n, std::uint64_t seed);

/// Standard skew-normal variate from two independent standard normals.
/// `delta` = shape / sqrt(1 + shape^2).
inline double skew_normal_from_pair(double u0, double v, double delta) {
  const double u1 = delta * u0 + std::sqrt(1.0 - delta * delta) * v;
  return u0 >= 0.0 ? u1 : -u1;
}

}  // namespace normap
