#include "normap/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace normap::optim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_eval(const Objective& f, const Eigen::VectorXd& x) {
  const double v = f(x);
  return std::isfinite(v) ? v : kInf;
}

}  // namespace

Eigen::VectorXd central_gradient(const Objective& f, const Eigen::VectorXd& x, double rel_step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = safe_eval(f, probe);
    probe[i] = x[i] - h;
    const double down = safe_eval(f, probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Result minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options) {
  const Eigen::Index n = x0.size();
  Result out;
  out.x = std::move(x0);
  out.value = safe_eval(f, out.x);
  if (!std::isfinite(out.value)) return out;

  Eigen::MatrixXd inv_hessian = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd grad = central_gradient(f, out.x, options.fd_step);
  if (!grad.allFinite()) return out;
  bool fresh_hessian = true;
  int small_steps = 0;

  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    if (grad.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
      out.converged = true;
      return out;
    }

    Eigen::VectorXd dir = -inv_hessian * grad;
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      inv_hessian.setIdentity();
      fresh_hessian = true;
      dir = -grad;
      slope = grad.dot(dir);
    }

    // Backtracking Armijo search.
    double step = 1.0;
    double trial_value = kInf;
    Eigen::VectorXd trial;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      trial = out.x + step * dir;
      trial_value = safe_eval(f, trial);
      if (trial_value <= out.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!fresh_hessian) {
        inv_hessian.setIdentity();
        fresh_hessian = true;
        continue;
      }
      // No descent possible along the gradient: we are at the noise floor
      // of the finite-difference gradient.
      out.converged = grad.lpNorm<Eigen::Infinity>() <= 1e-3;
      return out;
    }

    const double improvement = out.value - trial_value;
    Eigen::VectorXd new_grad = central_gradient(f, trial, options.fd_step);
    if (!new_grad.allFinite()) return out;

    const Eigen::VectorXd s = trial - out.x;
    const Eigen::VectorXd y = new_grad - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_hessian) {
        inv_hessian *= sy / y.squaredNorm();
        fresh_hessian = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inv_hessian * y;
      inv_hessian += ((sy + y.dot(hy)) * rho * rho) * (s * s.transpose()) -
                     rho * (hy * s.transpose() + s * hy.transpose());
    }

    out.x = std::move(trial);
    out.value = trial_value;
    grad = std::move(new_grad);

    if (improvement <= options.relative_tolerance * std::abs(out.value)) {
      if (++small_steps >= 2) {
        out.converged = true;
        return out;
      }
    } else {
      small_steps = 0;
    }
  }
  return out;
}

Result minimize_nelder_mead(const Objective& f, Eigen::VectorXd x0,
                            const NelderMeadOptions& options) {
  const auto n = static_cast<std::size_t>(x0.size());
  std::vector<Eigen::VectorXd> simplex(n + 1, x0);
  std::vector<double> values(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    simplex[i + 1][static_cast<Eigen::Index>(i)] +=
        options.initial_step * std::max(1.0, std::abs(x0[static_cast<Eigen::Index>(i)]));
  }
  for (std::size_t i = 0; i <= n; ++i) values[i] = safe_eval(f, simplex[i]);

  std::vector<std::size_t> order(n + 1);
  Result out;
  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

    if (std::isfinite(values[worst]) &&
        std::abs(values[worst] - values[best]) <=
            options.relative_tolerance * (std::abs(values[best]) + 1e-300)) {
      out.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(x0.size());
    for (std::size_t i = 0; i <= n; ++i) {
      if (i != worst) centroid += simplex[i];
    }
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + (centroid - simplex[worst]);
    const double fr = safe_eval(f, reflected);
    if (fr < values[best]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = safe_eval(f, expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Eigen::VectorXd contracted = outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                                               : Eigen::VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = safe_eval(f, contracted);
    if (fc < std::min(fr, values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
      values[i] = safe_eval(f, simplex[i]);
    }
  }
  const auto best_it = std::min_element(values.begin(), values.end());
  out.x = simplex[static_cast<std::size_t>(best_it - values.begin())];
  out.value = *best_it;
  if (!std::isfinite(out.value)) out.converged = false;
  return out;
}

Eigen::MatrixXd central_hessian(const Objective& f, const Eigen::VectorXd& x, double rel_step) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h[i] = rel_step * std::max(1.0, std::abs(x[i]));
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd p = x;
  const double f0 = safe_eval(f, x);
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = x[i] + h[i];
    const double up = safe_eval(f, p);
    p[i] = x[i] - h[i];
    const double down = safe_eval(f, p);
    p[i] = x[i];
    H(i, i) = (up - 2.0 * f0 + down) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      double acc = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          p[i] = x[i] + si * h[i];
          p[j] = x[j] + sj * h[j];
          acc += si * sj * safe_eval(f, p);
        }
      }
      p[i] = x[i];
      p[j] = x[j];
      H(i, j) = H(j, i) = acc / (4.0 * h[i] * h[j]);
    }
  }
  return H;
}

Result newton_polish(const Objective& f, Result start, int max_steps, double fd_step) {
  Result out = std::move(start);
  for (int s = 0; s < max_steps; ++s) {
    const Eigen::VectorXd g = central_gradient(f, out.x, fd_step);
    // Curvature needs a coarser step than the gradient to beat cancellation.
    const Eigen::MatrixXd H = central_hessian(f, out.x, 1e-4);
    if (!g.allFinite() || !H.allFinite()) break;
    const Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) break;
    const Eigen::VectorXd x = out.x - llt.solve(g);
    const double v = safe_eval(f, x);
    if (!(v <= out.value)) break;
    out.x = x;
    out.value = v;
  }
  return out;
}

}  // namespace normap::optim
