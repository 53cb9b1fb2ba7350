#pragma once

#include <array>
#include <cmath>

namespace normap::quad {

namespace detail {

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
inline constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
void gk15(F& f, double a, double b, double& result, double& error) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kXgk[j];
    const double sum = f(center - dx) + f(center + dx);
    kronrod += kWgk[j] * sum;
    if (j % 2 == 1) gauss += kWg[j / 2] * sum;
  }
  result = kronrod * half;
  error = std::abs((kronrod - gauss) * half);
}

template <class F>
double adapt(F& f, double a, double b, double tol, double whole, int depth) {
  const double mid = 0.5 * (a + b);
  double left = 0.0, left_err = 0.0, right = 0.0, right_err = 0.0;
  gk15(f, a, mid, left, left_err);
  gk15(f, mid, b, right, right_err);
  const double refined = left + right;
  if (depth <= 0 || left_err + right_err <= tol || std::abs(refined - whole) <= 1e-3 * tol) {
    return refined;
  }
  return adapt(f, a, mid, 0.5 * tol, left, depth - 1) +
         adapt(f, mid, b, 0.5 * tol, right, depth - 1);
}

}  // namespace detail

/// Adaptive Gauss-Kronrod (7/15) integration of f over a finite [a, b].
template <class F>
double integrate(F&& f, double a, double b, double abs_tol = 1e-12, int max_depth = 40) {
  if (a == b) return 0.0;
  double whole = 0.0, err = 0.0;
  detail::gk15(f, a, b, whole, err);
  if (err <= abs_tol) return whole;
  return detail::adapt(f, a, b, abs_tol, whole, max_depth);
}

}  // namespace normap::quad
