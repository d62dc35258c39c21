#include "qafano/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qafano/error.hpp"

namespace qafano::analysis {

namespace {

using fit::Vector;

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Full width at half of (max - min) above the minimum, by linear interpolation.
double data_fwhm(const std::vector<double>& x, const std::vector<double>& y) {
  const auto imax = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double lo = *std::min_element(y.begin(), y.end());
  const double half = lo + 0.5 * (y[imax] - lo);
  std::size_t l = imax;
  while (l > 0 && y[l] > half) --l;
  std::size_t r = imax;
  while (r + 1 < y.size() && y[r] > half) ++r;
  auto cross = [&](std::size_t a, std::size_t b) {
    if (y[b] == y[a]) return x[a];
    return x[a] + (half - y[a]) * (x[b] - x[a]) / (y[b] - y[a]);
  };
  const double xl = l < imax ? cross(l, l + 1) : x[l];
  const double xr = r > imax ? cross(r - 1, r) : x[r];
  double w = xr - xl;
  if (!(w > 0.0)) w = x.size() > 1 ? (x.back() - x.front()) / static_cast<double>(x.size() - 1) : 1.0;
  return w;
}

}  // namespace

lineshape::FanoParams fano_initial_guess(const Spectrum& s) {
  if (s.size() < 5) throw UnderdeterminedError("Fano fit needs at least 5 points");
  const auto imax = static_cast<std::size_t>(std::max_element(s.y.begin(), s.y.end()) - s.y.begin());
  const double lo = *std::min_element(s.y.begin(), s.y.end());
  lineshape::FanoParams p;
  p.omega_m = s.x[imax];
  p.gamma = data_fwhm(s.x, s.y);
  p.n_off = lo;
  p.n_max = s.y[imax] - lo;
  p.q = 0.0;
  return p;
}

lineshape::FanoParams fano_extremum_guess(const Spectrum& s) {
  if (s.size() < 5) throw UnderdeterminedError("Fano fit needs at least 5 points");
  std::vector<double> sorted = s.y;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double base = sorted[sorted.size() / 2];
  std::vector<double> dev(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) dev[i] = std::abs(s.y[i] - base);
  const auto iext = static_cast<std::size_t>(std::max_element(dev.begin(), dev.end()) - dev.begin());
  lineshape::FanoParams p;
  p.omega_m = s.x[iext];
  p.gamma = data_fwhm(s.x, dev);
  p.n_off = base;
  p.n_max = s.y[iext] - base;
  p.q = 0.0;
  return p;
}

fit::FitResult fit_fano(const Spectrum& s, const FanoFitOptions& opts) {
  s.validate();
  const auto init = opts.init ? *opts.init : opts.extremum_guess ? fano_extremum_guess(s) : fano_initial_guess(s);
  fit::FitProblem prob = fit::make_problem(
      [](const Vector& p, double w) {
        return lineshape::fano_absorption(w, {p(0), p(1), p(2), p(3), p(4)});
      },
      s.x, s.y, Vector{{init.n_max, init.q, init.gamma, init.omega_m, init.n_off}},
      {"n_max", "q", "gamma", "omega_m", "n_off"});
  const double inf = std::numeric_limits<double>::infinity();
  const double lo_amp = opts.non_negative ? 0.0 : -inf;
  prob.lower = Vector{{lo_amp, -inf, 0.0, -inf, lo_amp}};
  prob.upper = Vector{{inf, inf, inf, inf, inf}};
  if (opts.non_negative) {
    prob.init(0) = std::max(prob.init(0), 0.0);
    prob.init(4) = std::max(prob.init(4), 0.0);
  }
  if (!opts.sigma.empty()) prob.sigma = to_vector(opts.sigma);
  auto res = fit::fit(prob, opts.fit);
  res.params(2) = std::abs(res.params(2));
  return res;
}

lineshape::FanoParams fano_params(const fit::FitResult& r) {
  return {r.value("n_max"), r.value("q"), r.value("gamma"), r.value("omega_m"), r.value("n_off")};
}

fit::FitResult fit_loss(const Spectrum& s, int n_pairs, std::optional<lineshape::LossParams> init,
                        const fit::FitOptions& opts) {
  s.validate();
  if (n_pairs < 1) throw DomainError("fit_loss: n_pairs must be >= 1");
  lineshape::LossParams start;
  if (init) {
    start = *init;
  } else {
    // Internal term from the smallest rate, peak from the largest.
    const auto [mn, mx] = std::minmax_element(s.y.begin(), s.y.end());
    const auto i_mn = static_cast<std::size_t>(mn - s.y.begin());
    const auto i_mx = static_cast<std::size_t>(mx - s.y.begin());
    start.q_i = 2.0 * M_PI * s.x[i_mn] / *mn;
    start.omega_idt = s.x[i_mx];
    start.gamma_0 = std::max(*mx - 2.0 * M_PI * s.x[i_mx] / start.q_i, 0.0);
    start.n_pairs = n_pairs;
  }
  fit::FitProblem prob = fit::make_problem(
      [n_pairs](const Vector& p, double f) { return lineshape::loss_rate(f, {p(0), p(1), n_pairs, p(2)}); }, s.x,
      s.y, Vector{{start.q_i, start.gamma_0, start.omega_idt}}, {"q_i", "gamma_0", "omega_idt"});
  const double inf = std::numeric_limits<double>::infinity();
  prob.lower = Vector{{1.0, 0.0, 1.0}};
  prob.upper = Vector{{inf, inf, inf}};
  return fit::fit(prob, opts);
}

fit::FitResult fit_coherent(const Spectrum& s, double two_chi, const fit::FitOptions& opts) {
  s.validate();
  if (s.size() < 6) throw UnderdeterminedError("coherent fit needs at least 6 points");
  const auto imax = static_cast<std::size_t>(std::max_element(s.y.begin(), s.y.end()) - s.y.begin());
  const double lo = *std::min_element(s.y.begin(), s.y.end());
  const double width = data_fwhm(s.x, s.y);
  const double height = s.y[imax] - lo;
  // Area of a Lorentzian with this height and width.
  const double area = height * M_PI * 0.5 * width;
  fit::FitProblem prob = fit::make_problem(
      [two_chi](const Vector& p, double f) {
        // Difference steps may probe just below the n_bar bound.
        return p(3) * quantum::coherent_state_density(f, std::max(p(0), 0.0), two_chi, p(2), p(1)) + p(4);
      },
      s.x, s.y, Vector{{0.5, s.x[imax], width, area, lo}}, {"n_bar", "omega_q0", "gamma_q", "amplitude", "offset"});
  const double inf = std::numeric_limits<double>::infinity();
  prob.lower = Vector{{0.0, -inf, 1e-12 * std::abs(s.x[imax]) + 1e-300, -inf, -inf}};
  prob.upper = Vector{{inf, inf, inf, inf, inf}};
  // Same model, but the Poisson weights are built once per parameter vector.
  prob.model = [two_chi, x = s.x](const Vector& p) {
    const auto w = quantum::poisson_weights(std::max(p(0), 0.0));
    Vector out(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      double d = 0.0;
      for (std::size_t n = 0; n < w.size(); ++n)
        d += w[n] * quantum::lorentzian(x[i], p(1) + two_chi * static_cast<double>(n), p(2));
      out(static_cast<Eigen::Index>(i)) = p(3) * d + p(4);
    }
    return out;
  };

  // Resolved Poisson combs have one local minimum per peak; screen starts with
  // the mode of each trial distribution on the data maximum, polish the best.
  fit::FitOptions screen = opts;
  screen.max_iter = std::min(opts.max_iter, 20);
  std::optional<fit::FitResult> best;
  for (double n0 : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    prob.init(0) = n0;
    prob.init(1) = s.x[imax] - two_chi * std::floor(n0);
    try {
      auto r = fit::fit(prob, screen);
      if (!best || r.chi2 < best->chi2) best = std::move(r);
    } catch (const RankDeficientError&) {
      if (n0 == 0.5) throw;
    }
  }
  if (best->converged && best->n_iter < screen.max_iter) return *best;
  prob.init = best->params;
  return fit::fit(prob, opts);
}

fit::FitResult fit_line(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& sigma,
                        const fit::FitOptions& opts) {
  if (x.size() != y.size()) throw DomainError("fit_line: x and y lengths differ");
  if (x.size() < 2) throw UnderdeterminedError("fit_line: need at least two points");
  fit::FitProblem prob = fit::make_problem([](const Vector& p, double t) { return p(0) * t + p(1); }, x, y,
                                           Vector{{0.0, 0.0}}, {"slope", "intercept"});
  if (!sigma.empty()) prob.sigma = to_vector(sigma);
  return fit::fit(prob, opts);
}

std::vector<Ridge> extract_ridges(const quantum::TwoToneMap& map, double threshold) {
  std::vector<Ridge> ridges;
  const auto rows = map.amplitude.rows();
  for (Eigen::Index c = 0; c < map.amplitude.cols(); ++c) {
    const auto col = map.amplitude.col(c);
    const double top = col.maxCoeff();
    // Robust noise floor: median plus eight MAD-derived standard deviations.
    std::vector<double> sorted(col.begin(), col.end());
    std::nth_element(sorted.begin(), sorted.begin() + rows / 2, sorted.end());
    const double median = sorted[static_cast<std::size_t>(rows / 2)];
    for (auto& v : sorted) v = std::abs(v - median);
    std::nth_element(sorted.begin(), sorted.begin() + rows / 2, sorted.end());
    const double noise = 1.4826 * sorted[static_cast<std::size_t>(rows / 2)];
    const double floor = std::max(threshold * top, median + 8.0 * noise);
    struct Peak {
      double height;
      double position;
      Eigen::Index row;
    };
    std::vector<Peak> peaks;
    for (Eigen::Index r = 1; r + 1 < rows; ++r) {
      if (col(r) > col(r - 1) && col(r) >= col(r + 1) && col(r) >= floor) {
        // Parabolic refinement through the three samples around the maximum.
        const double y0 = col(r - 1), y1 = col(r), y2 = col(r + 1);
        const double denom = y0 - 2.0 * y1 + y2;
        const double shift = denom != 0.0 ? 0.5 * (y0 - y2) / denom : 0.0;
        const double step = 0.5 * (map.probe[r + 1] - map.probe[r - 1]);
        peaks.push_back({y1, map.probe[r] + shift * step, r});
      }
    }
    if (peaks.size() < 2) continue;
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.height > b.height; });
    // The partner must be separated from the main peak by a valley below half
    // its own height; noise on a single line only produces shallow notches.
    const Peak& main = peaks.front();
    const Peak* partner = nullptr;
    for (std::size_t k = 1; k < peaks.size() && !partner; ++k) {
      const auto lo = std::min(main.row, peaks[k].row);
      const auto hi = std::max(main.row, peaks[k].row);
      if (col.segment(lo, hi - lo + 1).minCoeff() <= 0.5 * peaks[k].height) partner = &peaks[k];
    }
    if (!partner) continue;
    const double a = main.position;
    const double b = partner->position;
    ridges.push_back({map.omega_q[c], std::min(a, b), std::max(a, b)});
  }
  return ridges;
}

fit::FitResult extract_avoided_crossing(const quantum::TwoToneMap& map, const CrossingInit& init,
                                        const fit::FitOptions& opts) {
  const auto ridges = extract_ridges(map);
  if (ridges.size() < 3)
    throw ExtractionError("extract_avoided_crossing: only " + std::to_string(ridges.size()) +
                          " columns show two branches");

  // Narrowest splitting seeds both parameters.
  const auto closest = std::min_element(ridges.begin(), ridges.end(), [](const Ridge& a, const Ridge& b) {
    return a.upper - a.lower < b.upper - b.lower;
  });
  const double g0 = init.g_m ? *init.g_m : 0.5 * (closest->upper - closest->lower);
  const double wm0 = init.omega_m ? *init.omega_m : 0.5 * (closest->upper + closest->lower);

  const auto n = static_cast<Eigen::Index>(ridges.size());
  fit::FitProblem prob;
  prob.y.resize(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    prob.y(i) = ridges[i].lower;
    prob.y(n + i) = ridges[i].upper;
  }
  // Squared coupling in units of the probe step keeps difference steps resolvable.
  const double unit = map.probe.size() > 1 ? map.probe[1] - map.probe[0] : 1.0;
  prob.model = [ridges, n, unit](const Vector& p) {
    Vector out(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = unit * std::sqrt(std::max(p(0), 0.0));
      out(i) = quantum::crossing_branch(ridges[i].omega_q, p(1), g, -1);
      out(n + i) = quantum::crossing_branch(ridges[i].omega_q, p(1), g, +1);
    }
    return out;
  };
  const double inf = std::numeric_limits<double>::infinity();
  prob.init = Vector{{(g0 / unit) * (g0 / unit), wm0}};
  prob.lower = Vector{{0.0, -inf}};
  prob.upper = Vector{{inf, inf}};
  prob.names = {"g_m", "omega_m"};
  auto res = fit::fit(prob, opts);

  // Back to g_m: half-width of the interval [sqrt(s - ds), sqrt(s + ds)].
  const double s2 = res.params(0);
  const double ds = res.sigma(0);
  const double g = unit * std::sqrt(s2);
  const double dg = 0.5 * unit * (std::sqrt(s2 + ds) - std::sqrt(std::max(s2 - ds, 0.0)));
  const double k = ds > 0.0 && std::isfinite(ds) ? dg / ds : 1.0;
  res.params(0) = g;
  res.sigma(0) = dg;
  res.covariance.row(0) *= k;
  res.covariance.col(0) *= k;
  for (auto& it : res.iterates) it(0) = unit * std::sqrt(std::max(it(0), 0.0));
  return res;
}

}  // namespace qafano::analysis
