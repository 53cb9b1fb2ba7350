#pragma once

#include <Eigen/Dense>
#include <functional>

namespace normap::optim {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Result {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct BfgsOptions {
  int max_iterations = 500;
  /// Stop when |f_k - f_{k+1}| <= relative_tolerance * |f_{k+1}| on two consecutive steps.
  double relative_tolerance = 1e-10;
  /// Or when the gradient's max-norm drops below this.
  double gradient_tolerance = 1e-8;
  /// Central-difference step, relative to max(1, |x_i|).
  double fd_step = 1e-6;
};

struct NelderMeadOptions {
  int max_iterations = 5000;
  double initial_step = 0.1;
  double relative_tolerance = 1e-12;
};

Eigen::VectorXd central_gradient(const Objective& f, const Eigen::VectorXd& x, double rel_step);

/// Quasi-Newton minimisation with finite-difference gradients and a
/// backtracking Armijo line search. Non-finite objective values are treated
/// as +infinity.
Result minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options = {});

Result minimize_nelder_mead(const Objective& f, Eigen::VectorXd x0,
                            const NelderMeadOptions& options = {});

/// Central-difference Hessian, step relative to max(1, |x_i|).
Eigen::MatrixXd central_hessian(const Objective& f, const Eigen::VectorXd& x, double rel_step);

/// A few damped Newton steps from a converged point. A step is kept only if it
/// does not raise the objective; stops early if the Hessian is not positive definite.
Result newton_polish(const Objective& f, Result start, int max_steps = 3, double fd_step = 1e-6);

}  // namespace normap::optim
