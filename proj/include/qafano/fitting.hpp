#pragma once

// Bounded Levenberg-Marquardt least squares with covariance estimates.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace qafano::fit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Model values at every data point for a parameter vector.
using BatchModel = std::function<Vector(const Vector& params)>;
// Model value at one abscissa.
using PointModel = std::function<double(const Vector& params, double x)>;

struct FitProblem {
  BatchModel model;
  Vector y;
  Vector sigma;  // per-point 1-sigma; empty means unit weights
  Vector init;
  Vector lower;  // empty means unbounded
  Vector upper;
  std::vector<std::string> names;

  void validate() const;
};

// Evaluates `model` on a fixed grid.
BatchModel on_grid(PointModel model, std::vector<double> x);

FitProblem make_problem(PointModel model, std::vector<double> x, std::vector<double> y, Vector init,
                        std::vector<std::string> names);

struct FitOptions {
  int max_iter = 200;
  double ftol = 1e-10;
  double xtol = 1e-10;
  // 0 starts with a plain Gauss-Newton step; damping kicks in on the first rejection.
  double lambda_init = 0.0;
  double rel_step = 1e-6;
};

struct FitResult {
  std::vector<std::string> names;
  Vector params;
  Vector sigma;
  Matrix covariance;
  double chi2 = 0.0;
  int n_iter = 0;
  bool converged = false;
  // Parameters sitting on a bound; their covariance entries are unreliable.
  std::vector<bool> at_bound;
  // chi2 after the initial point and after each accepted step.
  std::vector<double> chi2_history;
  // Parameter vector matching each chi2_history entry.
  std::vector<Vector> iterates;

  double value(const std::string& name) const;
  double error(const std::string& name) const;
  int index(const std::string& name) const;
};

// Minimizes sum w_i (model_i - y_i)^2. Throws RankDeficientError when the
// normal matrix is singular at an accepted iterate, EvaluationError on
// non-finite model output.
FitResult fit(const FitProblem& problem, const FitOptions& options = {});

// Central differences with step rel_step * max(|p_i|, 1).
Matrix numerical_jacobian(const BatchModel& model, const Vector& params, double rel_step = 1e-6);
Matrix numerical_jacobian(const PointModel& model, const Vector& params, std::span<const double> grid,
                          double rel_step = 1e-6);

// {"params": {...}, "sigma": {...}, "chi2": x, "converged": b, "n_iter": k, ...}
nlohmann::ordered_json to_json(const FitResult& r);

}  // namespace qafano::fit
