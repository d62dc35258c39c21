#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "qafano/analysis.hpp"
#include "qafano/error.hpp"
#include "qafano/fitting.hpp"

using namespace qafano;
using fit::Vector;

namespace {

const lineshape::FanoParams kTruth{8.0, -0.25, 630e3, 4.4588e9, 0.1};

std::vector<double> fano_grid() { return linspace(kTruth.omega_m - 5e6, kTruth.omega_m + 5e6, 401); }

fit::PointModel fano_point() {
  return [](const Vector& p, double w) {
    return lineshape::fano_absorption(w, {p(0), p(1), p(2), p(3), p(4)});
  };
}

Vector truth_vector() {
  Vector v(5);
  v << kTruth.n_max, kTruth.q, kTruth.gamma, kTruth.omega_m, kTruth.n_off;
  return v;
}

quantum::TwoToneMap crossing_map(double g, std::size_t columns, double visibility, double noise, unsigned seed) {
  quantum::HybridParams hp;
  hp.g_m = g;
  hp.omega_m = 4.4588e9;
  const auto wq = linspace(hp.omega_m - 50e6, hp.omega_m + 50e6, columns);
  const auto probe = linspace(hp.omega_m - 70e6, hp.omega_m + 70e6, 701);
  auto map = quantum::two_tone_map(hp, wq, probe, 2e6, visibility);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  if (noise > 0.0)
    for (Eigen::Index i = 0; i < map.amplitude.size(); ++i) map.amplitude.data()[i] += n(rng);
  return map;
}

}  // namespace

TEST_CASE("exact linear data") {
  const std::vector<double> x{-2.0, -1.0, 0.5, 3.0, 4.0};
  std::vector<double> y;
  for (double v : x) y.push_back(1.75 * v - 0.5);
  const auto r = analysis::fit_line(x, y);
  CHECK(r.converged);
  CHECK(r.n_iter <= 2);
  double yy = 0.0;
  for (double v : y) yy += v * v;
  CHECK(r.chi2 <= 1e-28 * yy);
  CHECK(r.value("slope") == doctest::Approx(1.75).epsilon(1e-14));
  CHECK(r.value("intercept") == doctest::Approx(-0.5).epsilon(1e-14));
}

TEST_CASE("Fano recovery over 100 noise seeds") {
  const auto grid = fano_grid();
  int good = 0;
  for (unsigned seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::normal_distribution<double> n(0.0, 0.01 * kTruth.n_max);
    std::vector<double> y;
    for (double w : grid) y.push_back(lineshape::fano_absorption(w, kTruth) + n(rng));
    const auto s = make_spectrum(grid, y, Unit::hertz, Unit::dimensionless, "synthetic");
    analysis::FanoFitOptions o;
    o.non_negative = false;
    const auto r = analysis::fit_fano(s, o);
    const Vector t = truth_vector();
    bool ok = r.converged;
    for (int i = 0; i < 5; ++i) ok = ok && std::abs(r.params(i) - t(i)) <= 3.0 * r.sigma(i);
    good += ok ? 1 : 0;
  }
  MESSAGE("seeds within 3 sigma: " << good);
  CHECK(good >= 95);
}

TEST_CASE("loss model round trip") {
  const auto truth = lineshape::reference_loss();
  const auto grid = linspace(3.8e9, 5.2e9, 701);
  std::vector<double> y;
  for (double f : grid) y.push_back(lineshape::loss_rate(f, truth));
  const auto s = make_spectrum(grid, y, Unit::hertz, Unit::per_second, "synthetic");
  lineshape::LossParams init = truth;
  init.q_i = 6e3;
  init.gamma_0 = 0.15e9;
  init.omega_idt = 4.45e9;
  const auto r = analysis::fit_loss(s, truth.n_pairs, init);
  CHECK(r.converged);
  CHECK(r.value("q_i") == doctest::Approx(1.05e4).epsilon(0.02));
  CHECK(r.value("gamma_0") == doctest::Approx(0.252e9).epsilon(0.02));
  CHECK(r.value("omega_idt") == doctest::Approx(truth.omega_idt).epsilon(1e-6));
}

TEST_CASE("numerical jacobian") {
  const auto grid = linspace(1.0, 9.0, 9);
  SUBCASE("linear in the parameter") {
    fit::PointModel m = [](const Vector& p, double w) { return p(0) * w; };
    Vector p(1);
    p << 3.5;
    const auto j = fit::numerical_jacobian(m, p, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(j(static_cast<Eigen::Index>(i), 0) == doctest::Approx(grid[i]).epsilon(1e-9));
  }
  SUBCASE("constant model") {
    fit::PointModel m = [](const Vector&, double) { return 4.0; };
    Vector p(2);
    p << 1.0, -7.0;
    CHECK(fit::numerical_jacobian(m, p, grid).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("Fano derivative in q") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uq(-2.0, 2.0), ud(-3e6, 3e6);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
      Vector p = truth_vector();
      p(1) = uq(rng);
      const std::vector<double> w{p(3) + ud(rng)};
      const auto j = fit::numerical_jacobian(fano_point(), p, w);
      const double x = (w[0] - p(3)) / (0.5 * p(2));
      const double analytic = -2.0 * p(0) * x * (1.0 - p(1) * x) / (1.0 + x * x);
      worst = std::max(worst, std::abs(j(0, 1) - analytic) / std::max(std::abs(analytic), p(0) * 1e-3));
    }
    CHECK(worst < 1e-6);
  }
  SUBCASE("non-finite output names the parameter") {
    fit::PointModel m = [](const Vector& p, double w) { return w * std::sqrt(p(1)) + p(0); };
    Vector p(2);
    p << 1.0, 0.0;
    try {
      fit::numerical_jacobian(m, p, grid);
      FAIL("expected EvaluationError");
    } catch (const EvaluationError& e) {
      CHECK(e.parameter_index() == 1);
    }
  }
}

TEST_CASE("avoided crossing extraction") {
  SUBCASE("noisy map at the measured coupling") {
    const auto map = crossing_map(9.76e6, 41, 0.0, 0.02, 3);
    const auto r = analysis::extract_avoided_crossing(map);
    CHECK(r.converged);
    CHECK(r.value("g_m") == doctest::Approx(9.76e6).epsilon(0.05));
    CHECK(r.value("omega_m") == doctest::Approx(4.4588e9).epsilon(1e-5));
  }
  SUBCASE("no coupling") {
    const auto map = crossing_map(0.0, 41, 0.3, 0.0, 0);
    const auto r = analysis::extract_avoided_crossing(map);
    CHECK(std::abs(r.value("g_m")) <= std::max(r.error("g_m"), 0.5 * (map.probe[1] - map.probe[0])));
  }
  SUBCASE("sparse grid") {
    const auto map = crossing_map(5e6, 11, 0.0, 0.0, 0);
    const auto r = analysis::extract_avoided_crossing(map);
    CHECK(r.value("g_m") == doctest::Approx(5e6).epsilon(0.10));
  }
  SUBCASE("single ridge") {
    auto map = crossing_map(9.76e6, 41, 0.0, 0.0, 0);
    for (Eigen::Index c = 0; c < map.amplitude.cols(); ++c) {
      const auto col = map.amplitude.col(c).eval();
      Eigen::Index top = 0;
      col.maxCoeff(&top);
      map.amplitude.col(c).setZero();
      map.amplitude(top, c) = 1.0;
    }
    CHECK_THROWS_AS(analysis::extract_avoided_crossing(map), ExtractionError);
  }
}

TEST_CASE("fitter invariants") {
  const auto grid = fano_grid();
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 0.08);
  std::vector<double> y;
  for (double w : grid) y.push_back(lineshape::fano_absorption(w, kTruth) + n(rng));
  Vector init(5);
  init << 5.0, 0.3, 1.2e6, kTruth.omega_m + 3e5, 0.4;
  const std::vector<std::string> names{"n_max", "q", "gamma", "omega_m", "n_off"};

  SUBCASE("chi2 never increases") {
    const auto r = fit::fit(fit::make_problem(fano_point(), grid, y, init, names));
    CHECK(r.converged);
    REQUIRE(r.chi2_history.size() >= 2);
    for (std::size_t i = 1; i < r.chi2_history.size(); ++i) CHECK(r.chi2_history[i] <= r.chi2_history[i - 1]);
  }
  SUBCASE("common scaling of data and weights") {
    const double a = 37.5;
    auto base = fit::make_problem(fano_point(), grid, y, init, names);
    base.sigma = Vector::Constant(static_cast<Eigen::Index>(grid.size()), 0.08);
    std::vector<double> ys;
    for (double v : y) ys.push_back(a * v);
    auto scaled = fit::make_problem(
        [](const Vector& p, double w) { return 37.5 * lineshape::fano_absorption(w, {p(0), p(1), p(2), p(3), p(4)}); },
        grid, ys, init, names);
    scaled.sigma = a * base.sigma;
    const auto r1 = fit::fit(base);
    const auto r2 = fit::fit(scaled);
    for (int i = 0; i < 5; ++i)
      CHECK(r2.params(i) == doctest::Approx(r1.params(i)).epsilon(1e-10));
    // Residuals and sigma scale together, so the weighted chi2 is unchanged.
    CHECK(r2.chi2 == doctest::Approx(r1.chi2).epsilon(1e-8));

    // Same weights, data scaled: chi2 grows by a^2.
    auto plain = scaled;
    plain.sigma = base.sigma;
    const auto r3 = fit::fit(plain);
    for (int i = 0; i < 5; ++i)
      CHECK(r3.params(i) == doctest::Approx(r1.params(i)).epsilon(1e-10));
    CHECK(r3.chi2 == doctest::Approx(a * a * r1.chi2).epsilon(1e-8));
  }
  SUBCASE("bounds hold at every iterate") {
    auto prob = fit::make_problem(fano_point(), grid, y, init, names);
    prob.lower = Vector::Constant(5, -std::numeric_limits<double>::infinity());
    prob.upper = Vector::Constant(5, std::numeric_limits<double>::infinity());
    prob.upper(0) = 7.0;
    prob.lower(1) = -0.1;
    const auto r = fit::fit(prob);
    for (const auto& p : r.iterates) {
      CHECK(p(0) <= 7.0);
      CHECK(p(1) >= -0.1);
    }
    CHECK(r.at_bound[0]);
    CHECK(r.at_bound[1]);
    CHECK_FALSE(r.at_bound[2]);
  }
  SUBCASE("covariance symmetry") {
    const auto r = fit::fit(fit::make_problem(fano_point(), grid, y, init, names));
    const double scale = r.covariance.cwiseAbs().maxCoeff();
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        const double tol = 1e-12 * std::max(std::abs(r.covariance(i, j)), std::abs(r.covariance(j, i)));
        CHECK(std::abs(r.covariance(i, j) - r.covariance(j, i)) <= std::max(tol, 1e-300 * scale));
      }
  }
}

TEST_CASE("degenerate parameters are reported") {
  const auto grid = linspace(0.0, 1.0, 11);
  std::vector<double> y;
  for (double x : grid) y.push_back(3.0 * x);
  Vector init(2);
  init << 1.0, 1.0;
  const auto prob = fit::make_problem([](const Vector& p, double x) { return (p(0) + p(1)) * x; }, grid, y, init,
                                      {"a", "b"});
  try {
    fit::fit(prob);
    FAIL("expected RankDeficientError");
  } catch (const RankDeficientError& e) {
    const auto& d = e.direction();
    REQUIRE(d.size() == 2);
    CHECK(std::abs(d[0] + d[1]) < 1e-6);
    CHECK(std::hypot(d[0], d[1]) == doctest::Approx(1.0));
  }
}

TEST_CASE("iteration limit") {
  const auto grid = fano_grid();
  std::vector<double> y;
  for (double w : grid) y.push_back(lineshape::fano_absorption(w, kTruth));
  Vector init(5);
  init << 4.0, 0.5, 2e6, kTruth.omega_m + 4e5, 0.5;
  fit::FitOptions o;
  o.max_iter = 1;
  const auto r = fit::fit(fit::make_problem(fano_point(), grid, y, init, {"n_max", "q", "gamma", "omega_m", "n_off"}), o);
  CHECK_FALSE(r.converged);
  CHECK(r.n_iter == 1);
}

TEST_CASE("fit result json") {
  const auto r = analysis::fit_line({0.0, 1.0, 2.0}, {1.0, 3.0, 5.0});
  const auto j = fit::to_json(r);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  REQUIRE(keys.size() >= 5);
  CHECK(std::vector<std::string>(keys.begin(), keys.begin() + 5) ==
        std::vector<std::string>{"params", "sigma", "chi2", "converged", "n_iter"});
  CHECK(j["params"]["slope"].get<double>() == doctest::Approx(2.0));
  CHECK(j.dump() == fit::to_json(r).dump());
}

TEST_CASE("coherent fit of a vacuum line") {
  const double two_chi = quantum::dispersive_shift(9.76e6, 105e6, -328e6);
  const auto grid = linspace(4.55e9, 4.62e9, 1401);
  const auto s = quantum::coherent_state_spectrum(0.0, two_chi, 0.5e6, 4.59e9, grid);
  const auto r = analysis::fit_coherent(s, two_chi);
  CHECK(r.value("n_bar") < 0.05);
  CHECK(r.value("omega_q0") == doctest::Approx(4.59e9).epsilon(1e-7));

  const auto s2 = quantum::coherent_state_spectrum(4.0, two_chi, 0.5e6, 4.59e9, grid);
  const auto r2 = analysis::fit_coherent(s2, two_chi);
  CHECK(r2.value("n_bar") == doctest::Approx(4.0).epsilon(0.01));
}
