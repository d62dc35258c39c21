#include "qafano/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qafano/error.hpp"

namespace qafano::fit {

namespace {

bool has_bounds(const Vector& b) { return b.size() > 0; }

Vector clamp(const Vector& p, const Vector& lower, const Vector& upper) {
  Vector out = p;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (has_bounds(lower)) out(i) = std::max(out(i), lower(i));
    if (has_bounds(upper)) out(i) = std::min(out(i), upper(i));
  }
  return out;
}

Vector evaluate_checked(const BatchModel& model, const Vector& p, int param_index) {
  Vector v = model(p);
  if (!v.allFinite())
    throw EvaluationError("model returned a non-finite value" +
                              (param_index >= 0 ? " while perturbing parameter " + std::to_string(param_index)
                                                : std::string()),
                          param_index);
  return v;
}

double weighted_chi2(const Vector& residual, const Vector& w) { return residual.cwiseProduct(residual).dot(w); }

// Parameters on a bound whose descent direction points outward stay put.
std::vector<bool> pinned(const Vector& p, const Vector& grad, const Vector& lower, const Vector& upper) {
  std::vector<bool> out(static_cast<std::size_t>(p.size()), false);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const bool at_lo = lower.size() && p(i) <= lower(i) && grad(i) > 0.0;
    const bool at_hi = upper.size() && p(i) >= upper(i) && grad(i) < 0.0;
    out[static_cast<std::size_t>(i)] = at_lo || at_hi;
  }
  return out;
}

// Solves m x = -grad over the free parameters only.
Vector free_step(Matrix m, Vector grad, const std::vector<bool>& fixed) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (!fixed[static_cast<std::size_t>(i)]) continue;
    m.row(i).setZero();
    m.col(i).setZero();
    m(i, i) = 1.0;
    grad(i) = 0.0;
  }
  return m.ldlt().solve(-grad);
}

// Relative chi2 decrease promised by an undamped Gauss-Newton step.
double gauss_newton_gain(const Matrix& a, const Vector& grad, const std::vector<bool>& fixed, double chi2) {
  if (chi2 <= 0.0) return 0.0;
  const Vector step = free_step(a, grad, fixed);
  return std::abs(grad.dot(step)) / chi2;
}

constexpr double kStationary = 1e-6;

}  // namespace

void FitProblem::validate() const {
  const auto k = init.size();
  if (!model) throw DomainError("fit problem without a model");
  if (k == 0) throw DomainError("fit problem without parameters");
  if (y.size() < k)
    throw UnderdeterminedError("fit problem has " + std::to_string(y.size()) + " points for " +
                               std::to_string(k) + " parameters");
  if (sigma.size() != 0 && sigma.size() != y.size()) throw DomainError("sigma length differs from data length");
  if (sigma.size() != 0 && !(sigma.array() > 0.0).all()) throw DomainError("sigma must be positive");
  if ((lower.size() != 0 && lower.size() != k) || (upper.size() != 0 && upper.size() != k))
    throw DomainError("bounds length differs from parameter count");
  for (Eigen::Index i = 0; i < k; ++i) {
    if (lower.size() != 0 && init(i) < lower(i)) throw DomainError("initial guess below lower bound");
    if (upper.size() != 0 && init(i) > upper(i)) throw DomainError("initial guess above upper bound");
  }
  if (!names.empty() && static_cast<Eigen::Index>(names.size()) != k)
    throw DomainError("parameter names length differs from parameter count");
}

BatchModel on_grid(PointModel model, std::vector<double> x) {
  return [model = std::move(model), x = std::move(x)](const Vector& p) {
    Vector out(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) out(static_cast<Eigen::Index>(i)) = model(p, x[i]);
    return out;
  };
}

FitProblem make_problem(PointModel model, std::vector<double> x, std::vector<double> y, Vector init,
                        std::vector<std::string> names) {
  FitProblem prob;
  prob.y = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
  prob.model = on_grid(std::move(model), std::move(x));
  prob.init = std::move(init);
  prob.names = std::move(names);
  return prob;
}

Matrix numerical_jacobian(const BatchModel& model, const Vector& params, double rel_step) {
  if (!(rel_step > 0.0)) throw DomainError("numerical_jacobian: rel_step must be positive");
  const Vector f0 = evaluate_checked(model, params, -1);
  Matrix jac(f0.size(), params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double h = rel_step * std::max(std::abs(params(i)), 1.0);
    Vector plus = params;
    Vector minus = params;
    plus(i) += h;
    minus(i) -= h;
    const double width = plus(i) - minus(i);  // exact representable step
    const Vector fp = evaluate_checked(model, plus, static_cast<int>(i));
    const Vector fm = evaluate_checked(model, minus, static_cast<int>(i));
    jac.col(i) = (fp - fm) / width;
  }
  return jac;
}

Matrix numerical_jacobian(const PointModel& model, const Vector& params, std::span<const double> grid,
                          double rel_step) {
  return numerical_jacobian(on_grid(model, std::vector<double>(grid.begin(), grid.end())), params, rel_step);
}

namespace {

// Eigen-decomposition of D^-1/2 A D^-1/2 with D = diag(A), so the rank test
// does not depend on the units of the parameters.
struct ScaledSpectrum {
  Vector inv_sqrt_d;  // 0 where the diagonal vanishes
  Eigen::SelfAdjointEigenSolver<Matrix> es;
  double cutoff = 0.0;
  bool full_rank = false;

  Vector null_direction() const {
    for (Eigen::Index i = 0; i < inv_sqrt_d.size(); ++i)
      if (inv_sqrt_d(i) == 0.0) return Vector::Unit(inv_sqrt_d.size(), i);
    Vector v = inv_sqrt_d.cwiseProduct(es.eigenvectors().col(0));
    return v / v.norm();
  }

  // Undetermined directions get infinite variance.
  Matrix pseudo_inverse() const {
    const Eigen::Index k = inv_sqrt_d.size();
    const double inf = std::numeric_limits<double>::infinity();
    Vector d(k);
    for (Eigen::Index i = 0; i < k; ++i) d(i) = es.eigenvalues()(i) > cutoff ? 1.0 / es.eigenvalues()(i) : inf;
    const Matrix core = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
    Matrix out = inv_sqrt_d.asDiagonal() * core * inv_sqrt_d.asDiagonal();
    for (Eigen::Index i = 0; i < k; ++i)
      if (inv_sqrt_d(i) == 0.0) out(i, i) = inf;
    return out;
  }
};

ScaledSpectrum scaled_spectrum(const Matrix& a) {
  ScaledSpectrum sc;
  const Eigen::Index k = a.rows();
  sc.inv_sqrt_d = Vector::Zero(k);
  bool zero_diag = false;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (a(i, i) > 0.0)
      sc.inv_sqrt_d(i) = 1.0 / std::sqrt(a(i, i));
    else
      zero_diag = true;
  }
  Matrix s = sc.inv_sqrt_d.asDiagonal() * a * sc.inv_sqrt_d.asDiagonal();
  for (Eigen::Index i = 0; i < k; ++i)
    if (sc.inv_sqrt_d(i) == 0.0) s(i, i) = 1.0;
  sc.es.compute(s);
  const double top = sc.es.eigenvalues().maxCoeff();
  sc.cutoff = 1e-14 * top;
  sc.full_rank = !zero_diag && top > 0.0 && sc.es.eigenvalues().minCoeff() > sc.cutoff;
  return sc;
}

}  // namespace

FitResult fit(const FitProblem& problem, const FitOptions& options) {
  problem.validate();
  const Eigen::Index k = problem.init.size();
  const Eigen::Index n = problem.y.size();
  const Vector w = problem.sigma.size() ? Vector(problem.sigma.array().square().inverse()) : Vector::Ones(n);

  FitResult res;
  res.names = problem.names;
  if (res.names.empty())
    for (Eigen::Index i = 0; i < k; ++i) res.names.push_back("p" + std::to_string(i));

  Vector p = clamp(problem.init, problem.lower, problem.upper);
  Vector r = evaluate_checked(problem.model, p, -1) - problem.y;
  double chi2 = weighted_chi2(r, w);
  res.chi2_history.push_back(chi2);
  res.iterates.push_back(p);
  double lambda = options.lambda_init;
  constexpr double nu = 3.0;

  auto normal_matrix = [&](const Matrix& jac) { return Matrix(jac.transpose() * w.asDiagonal() * jac); };
  auto check_rank = [&](const Matrix& a) {
    const ScaledSpectrum sc = scaled_spectrum(a);
    if (!sc.full_rank) {
      const Vector dir = sc.null_direction();
      throw RankDeficientError("normal equations are singular; parameters are not independently determined",
                               std::vector<double>(dir.data(), dir.data() + dir.size()));
    }
  };

  // Residuals at rounding level of the data count as an exact fit.
  const double exact_level = 1e-26 * problem.y.cwiseProduct(problem.y).dot(w);
  bool converged = chi2 <= exact_level;
  int iter = 0;
  Matrix jac = numerical_jacobian(problem.model, p, options.rel_step);
  Matrix a = normal_matrix(jac);
  check_rank(a);
  Vector grad = jac.transpose() * w.asDiagonal() * r;

  while (!converged && iter < options.max_iter) {
    ++iter;
    Matrix damped = a;
    damped.diagonal() += lambda * a.diagonal();
    const auto fixed = pinned(p, grad, problem.lower, problem.upper);
    const Vector step = free_step(damped, grad, fixed);
    const Vector trial = clamp(p + step, problem.lower, problem.upper);
    const Vector actual = trial - p;
    Vector trial_r = problem.model(trial);
    const bool finite = trial_r.allFinite();
    if (finite) trial_r -= problem.y;
    const double trial_chi2 = finite ? weighted_chi2(trial_r, w) : std::numeric_limits<double>::infinity();

    if (trial_chi2 <= chi2) {
      const double rel_change = chi2 > 0.0 ? (chi2 - trial_chi2) / chi2 : 0.0;
      const double step_norm = actual.norm();
      p = trial;
      r = trial_r;
      chi2 = trial_chi2;
      res.chi2_history.push_back(chi2);
      res.iterates.push_back(p);
      lambda = lambda / nu < 1e-12 ? 0.0 : lambda / nu;
      jac = numerical_jacobian(problem.model, p, options.rel_step);
      a = normal_matrix(jac);
      check_rank(a);
      grad = jac.transpose() * w.asDiagonal() * r;
      // Small changes only count as convergence when a full Gauss-Newton step
      // could not do better either (guards against heavily damped crawling).
      const bool stationary =
          gauss_newton_gain(a, grad, pinned(p, grad, problem.lower, problem.upper), chi2) < kStationary;
      if (chi2 <= exact_level ||
          (stationary && (rel_change < options.ftol || step_norm < options.xtol * (p.norm() + options.xtol)))) {
        converged = true;
        break;
      }
    } else {
      lambda = lambda == 0.0 ? 1e-3 : lambda * nu;
      if (lambda > 1e16) {
        // No downhill direction left at machine precision.
        converged = gauss_newton_gain(a, grad, fixed, chi2) < kStationary;
        break;
      }
    }
  }

  res.params = p;
  res.chi2 = chi2;
  res.n_iter = iter;
  res.converged = converged;

  jac = numerical_jacobian(problem.model, p, options.rel_step);
  a = normal_matrix(jac);
  const Matrix inv = scaled_spectrum(a).pseudo_inverse();
  const double scale = n > k ? chi2 / static_cast<double>(n - k) : 1.0;
  res.covariance = scale * inv;
  res.covariance = 0.5 * (res.covariance + res.covariance.transpose()).eval();
  res.sigma = res.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();

  res.at_bound.assign(static_cast<std::size_t>(k), false);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (problem.lower.size() && p(i) == problem.lower(i)) res.at_bound[i] = true;
    if (problem.upper.size() && p(i) == problem.upper(i)) res.at_bound[i] = true;
  }
  return res;
}

int FitResult::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DomainError("no fitted parameter named '" + name + "'");
  return static_cast<int>(it - names.begin());
}

double FitResult::value(const std::string& name) const { return params(index(name)); }
double FitResult::error(const std::string& name) const { return sigma(index(name)); }

nlohmann::ordered_json to_json(const FitResult& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  nlohmann::ordered_json sigma = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    params[r.names[i]] = r.params(static_cast<Eigen::Index>(i));
    const double s = r.sigma(static_cast<Eigen::Index>(i));
    sigma[r.names[i]] = std::isfinite(s) ? nlohmann::ordered_json(s) : nlohmann::ordered_json(nullptr);
  }
  j["params"] = params;
  j["sigma"] = sigma;
  j["chi2"] = r.chi2;
  j["converged"] = r.converged;
  j["n_iter"] = r.n_iter;
  nlohmann::ordered_json cov = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < r.covariance.rows(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < r.covariance.cols(); ++c) {
      const double v = r.covariance(i, c);
      row.push_back(std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr));
    }
    cov.push_back(row);
  }
  j["covariance"] = cov;
  nlohmann::ordered_json bound = nlohmann::ordered_json::array();
  for (bool b : r.at_bound) bound.push_back(b);
  j["at_bound"] = bound;
  return j;
}

}  // namespace qafano::fit
