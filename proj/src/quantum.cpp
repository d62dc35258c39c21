#include "qafano/quantum.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include "qafano/error.hpp"

namespace qafano::quantum {

namespace {

constexpr int kMaxDimension = 10000;

struct Block {
  std::vector<int> levels;  // transmon level of each basis state; phonons = N - level
  Eigen::VectorXd energies;
  Eigen::MatrixXd vectors;
};

// Diagonalizes the excitation-number-N block of the JC Hamiltonian.
Block diagonalize_block(const std::vector<double>& levels, double omega_m, double g, int n_total, int n_fock) {
  Block b;
  const int n_levels = static_cast<int>(levels.size());
  for (int j = 0; j < n_levels && j <= n_total; ++j)
    if (n_total - j < n_fock) b.levels.push_back(j);
  const auto dim = static_cast<Eigen::Index>(b.levels.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index a = 0; a < dim; ++a) {
    const int j = b.levels[a];
    const int n = n_total - j;
    h(a, a) = levels[j] + omega_m * n;
    if (a + 1 < dim && b.levels[a + 1] == j + 1) {
      // <j+1, n-1| g sqrt(j+1) sqrt(n) |j, n>
      const double c = g * std::sqrt(static_cast<double>(j + 1)) * std::sqrt(static_cast<double>(n));
      h(a, a + 1) = c;
      h(a + 1, a) = c;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  b.energies = es.eigenvalues();
  b.vectors = es.eigenvectors();
  return b;
}

// Eigenvector with maximal weight on the basis state with transmon level `level`.
std::pair<int, double> best_overlap(const Block& b, int level) {
  const auto it = std::find(b.levels.begin(), b.levels.end(), level);
  if (it == b.levels.end()) throw BranchError("bare state missing from truncated block");
  const auto row = static_cast<Eigen::Index>(it - b.levels.begin());
  int best = 0;
  double weight = -1.0;
  for (Eigen::Index k = 0; k < b.vectors.cols(); ++k) {
    const double w = b.vectors(row, k) * b.vectors(row, k);
    if (w > weight) {  // strict: ties go to the lower eigenvalue index
      weight = w;
      best = static_cast<int>(k);
    }
  }
  return {best, weight};
}

}  // namespace

void TransmonParams::validate() const {
  std::vector<std::string> bad;
  if (!(ej > 0.0)) bad.push_back("ej");
  if (!(ec > 0.0)) bad.push_back("ec");
  if (!(alpha >= 0.0)) bad.push_back("alpha");
  if (n_levels < 2 || n_levels > 12) bad.push_back("n_levels");
  if (!bad.empty()) {
    std::string msg = "invalid transmon parameters:";
    for (const auto& f : bad) msg += " " + f;
    throw ValidationError(msg, bad);
  }
}

void HybridParams::validate() const {
  std::vector<std::string> bad;
  if (!(g_m >= 0.0)) bad.push_back("g_m");
  if (!(omega_m > 0.0)) bad.push_back("omega_m");
  if (!std::isfinite(delta)) bad.push_back("delta");
  if (!bad.empty()) {
    std::string msg = "invalid hybrid parameters:";
    for (const auto& f : bad) msg += " " + f;
    throw ValidationError(msg, bad);
  }
}

TransmonParams reference_transmon() { return {8.5e9, 328e6, 328e6, 5, 19.7e9}; }

HybridParams reference_hybrid() { return {9.76e6, 4.4588e9, -138.6e6, 4.788e9, 75e6}; }

std::vector<double> transmon_level_frequencies(const TransmonParams& tp, double omega_q) {
  std::vector<double> e(static_cast<std::size_t>(tp.n_levels));
  for (int j = 0; j < tp.n_levels; ++j) e[j] = j * omega_q - tp.alpha * j * (j - 1) / 2.0;
  return e;
}

TransmonEstimate transmon_frequency_estimate(double ej, double ec) {
  if (!(ej > 0.0) || !(ec >= 0.0)) throw DomainError("transmon_frequency_estimate: energies must be positive");
  return {std::sqrt(8.0 * ej * ec) - ec, ec == 0.0 || ej / ec > 10.0};
}

double dispersive_shift(double g_m, double delta, double alpha) {
  if (delta == 0.0) throw SingularityError("dispersive_shift: qubit resonant with the mode (delta = 0)");
  if (delta == alpha) throw SingularityError("dispersive_shift: straddling point (delta = alpha)");
  return -(2.0 * g_m * g_m / delta) * (alpha / (delta - alpha));
}

Eigen::MatrixXd build_jc_hamiltonian(const TransmonParams& tp, const HybridParams& hp, double omega_q,
                                     int n_fock) {
  if (n_fock < 2) throw DomainError("build_jc_hamiltonian: n_fock must be >= 2");
  const long dim = static_cast<long>(tp.n_levels) * n_fock;
  if (dim > kMaxDimension)
    throw SizeError("build_jc_hamiltonian: dimension " + std::to_string(dim) + " exceeds " +
                    std::to_string(kMaxDimension));
  const auto levels = transmon_level_frequencies(tp, omega_q);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  for (int j = 0; j < tp.n_levels; ++j) {
    for (int n = 0; n < n_fock; ++n) {
      const int a = basis_index(j, n, n_fock);
      h(a, a) = levels[j] + hp.omega_m * n;
      // g sqrt(j+1) |j+1><j| (x) a  maps |j, n> -> sqrt(n) |j+1, n-1>
      if (j + 1 < tp.n_levels && n >= 1) {
        const int b = basis_index(j + 1, n - 1, n_fock);
        const double c = hp.g_m * std::sqrt(static_cast<double>(j + 1)) * std::sqrt(static_cast<double>(n));
        h(b, a) = c;
        h(a, b) = c;
      }
    }
  }
  return h;
}

Eigen::VectorXd jc_eigenvalues_blockwise(const TransmonParams& tp, const HybridParams& hp, double omega_q,
                                         int n_fock) {
  const auto levels = transmon_level_frequencies(tp, omega_q);
  std::vector<double> all;
  const int n_max_total = tp.n_levels - 1 + n_fock - 1;
  for (int n = 0; n <= n_max_total; ++n) {
    const Block b = diagonalize_block(levels, hp.omega_m, hp.g_m, n, n_fock);
    for (Eigen::Index k = 0; k < b.energies.size(); ++k) all.push_back(b.energies(k));
  }
  std::sort(all.begin(), all.end());
  return Eigen::Map<Eigen::VectorXd>(all.data(), static_cast<Eigen::Index>(all.size()));
}

DressedSpectrum stark_shift_vs_n(const TransmonParams& tp, const HybridParams& hp, double omega_q, int n_max) {
  return stark_shift_vs_n(tp, hp, omega_q, n_max, n_max + tp.n_levels + 5);
}

DressedSpectrum stark_shift_vs_n(const TransmonParams& tp, const HybridParams& hp, double omega_q, int n_max,
                                 int n_fock) {
  tp.validate();
  hp.validate();
  if (n_max < 0) throw DomainError("stark_shift_vs_n: n_max must be >= 0");
  if (n_fock < n_max + tp.n_levels + 5)
    throw DomainError("stark_shift_vs_n: n_fock below n_max + n_levels + 5 truncation buffer");
  if (static_cast<long>(tp.n_levels) * n_fock > kMaxDimension)
    throw SizeError("stark_shift_vs_n: Hilbert space too large");

  const auto levels = transmon_level_frequencies(tp, omega_q);
  DressedSpectrum out;
  double reference = 0.0;
  // Block N = n + 1 is shared: its |e,n> partner is the |g,n+1> block of the next step.
  Block ground_block = diagonalize_block(levels, hp.omega_m, hp.g_m, 0, n_fock);
  for (int n = 0; n <= n_max; ++n) {
    Block excited_block = diagonalize_block(levels, hp.omega_m, hp.g_m, n + 1, n_fock);
    const auto [gi, gw] = best_overlap(ground_block, 0);
    const auto [ei, ew] = best_overlap(excited_block, 1);
    if (gw < 0.5 || ew < 0.5)
      throw BranchError("stark_shift_vs_n: ambiguous dressed-state labeling at n = " + std::to_string(n) +
                        " (overlaps " + std::to_string(gw) + ", " + std::to_string(ew) + ")");
    const double transition = excited_block.energies(ei) - ground_block.energies(gi);
    if (n == 0) reference = transition;
    out.phonon_number.push_back(n);
    out.qubit_shift.push_back(transition - reference);
    out.branch_labels.push_back({gi, ei, gw, ew});
    ground_block = std::move(excited_block);
  }
  return out;
}

double stark_slope(const DressedSpectrum& s, int n_points) {
  const int m = std::min<int>(n_points, static_cast<int>(s.qubit_shift.size()));
  if (m < 2) throw UnderdeterminedError("stark_slope: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < m; ++i) {
    const double x = s.phonon_number[i];
    const double y = s.qubit_shift[i];
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

CrossingBranches avoided_crossing(const TransmonParams& tp, const HybridParams& hp,
                                  std::span<const double> omega_q_grid) {
  (void)tp;  // the crossing is a two-level property
  hp.validate();
  if (omega_q_grid.empty()) throw DomainError("avoided_crossing: empty grid");
  const auto [lo, hi] = std::minmax_element(omega_q_grid.begin(), omega_q_grid.end());
  if (!(*lo <= hp.omega_m && hp.omega_m <= *hi))
    throw DomainError("avoided_crossing: grid does not bracket the mode frequency (no crossing)");

  TransmonParams two_level{1.0, 1.0, 0.0, 2, 0.0};
  CrossingBranches out;
  for (double wq : omega_q_grid) {
    const Eigen::MatrixXd h = build_jc_hamiltonian(two_level, hp, wq, 2);
    // Single-excitation block {|g,1>, |e,0>}.
    const int g1 = basis_index(0, 1, 2);
    const int e0 = basis_index(1, 0, 2);
    Eigen::Matrix2d block;
    block << h(g1, g1), h(g1, e0), h(e0, g1), h(e0, e0);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(block);
    out.omega_q.push_back(wq);
    out.lower.push_back(es.eigenvalues()(0));
    out.upper.push_back(es.eigenvalues()(1));
    out.lower_qubit_weight.push_back(es.eigenvectors()(1, 0) * es.eigenvectors()(1, 0));
    out.upper_qubit_weight.push_back(es.eigenvectors()(1, 1) * es.eigenvectors()(1, 1));
  }
  return out;
}

double crossing_branch(double omega_q, double omega_m, double g_m, int sign) {
  const double d = omega_q - omega_m;
  return 0.5 * (omega_q + omega_m) + (sign >= 0 ? 0.5 : -0.5) * std::sqrt(d * d + 4.0 * g_m * g_m);
}

TwoToneMap two_tone_map(const HybridParams& hp, std::span<const double> omega_q_grid,
                        std::span<const double> probe_grid, double linewidth, double mode_visibility) {
  if (!(linewidth > 0.0)) throw DomainError("two_tone_map: linewidth must be positive");
  const auto br = avoided_crossing(TransmonParams{1.0, 1.0, 0.0, 2, 0.0}, hp, omega_q_grid);
  TwoToneMap m;
  m.omega_q.assign(omega_q_grid.begin(), omega_q_grid.end());
  m.probe.assign(probe_grid.begin(), probe_grid.end());
  m.amplitude.resize(static_cast<Eigen::Index>(probe_grid.size()), static_cast<Eigen::Index>(omega_q_grid.size()));
  const double hw2 = 0.25 * linewidth * linewidth;
  for (std::size_t c = 0; c < omega_q_grid.size(); ++c) {
    const double wl = std::min(1.0, br.lower_qubit_weight[c] + mode_visibility);
    const double wu = std::min(1.0, br.upper_qubit_weight[c] + mode_visibility);
    for (std::size_t r = 0; r < probe_grid.size(); ++r) {
      const double dl = probe_grid[r] - br.lower[c];
      const double du = probe_grid[r] - br.upper[c];
      m.amplitude(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          wl * hw2 / (hw2 + dl * dl) + wu * hw2 / (hw2 + du * du);
    }
  }
  return m;
}

int coherent_cutoff(double n_bar) {
  return std::max(20, static_cast<int>(std::ceil(n_bar + 8.0 * std::sqrt(n_bar))));
}

std::vector<double> poisson_weights(double n_bar) {
  if (!(n_bar >= 0.0)) throw DomainError("poisson_weights: n_bar must be >= 0");
  const int cut = coherent_cutoff(n_bar);
  std::vector<double> w(static_cast<std::size_t>(cut) + 1);
  double sum = 0.0;
  for (int n = 0; n <= cut; ++n) {
    // log-space keeps large n_bar finite
    const double lw = n_bar > 0.0 ? -n_bar + n * std::log(n_bar) - std::lgamma(n + 1.0) : (n == 0 ? 0.0 : -INFINITY);
    w[n] = std::exp(lw);
    sum += w[n];
  }
  for (auto& x : w) x /= sum;
  return w;
}

double lorentzian(double x, double centre, double gamma) {
  const double hw = 0.5 * gamma;
  const double d = x - centre;
  return hw / (std::numbers::pi * (hw * hw + d * d));
}

double coherent_state_density(double freq, double n_bar, double two_chi, double gamma_q, double omega_q_dressed) {
  const auto w = poisson_weights(n_bar);
  double s = 0.0;
  for (std::size_t n = 0; n < w.size(); ++n)
    s += w[n] * lorentzian(freq, omega_q_dressed + two_chi * static_cast<double>(n), gamma_q);
  return s;
}

Spectrum coherent_state_spectrum(double n_bar, double two_chi, double gamma_q, double omega_q_dressed,
                                 std::span<const double> freq_grid) {
  if (!(n_bar >= 0.0)) throw DomainError("coherent_state_spectrum: n_bar must be >= 0");
  if (!(gamma_q > 0.0)) throw DomainError("coherent_state_spectrum: gamma_q must be positive");
  const auto w = poisson_weights(n_bar);
  std::vector<double> x(freq_grid.begin(), freq_grid.end());
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t n = 0; n < w.size(); ++n)
      y[i] += w[n] * lorentzian(x[i], omega_q_dressed + two_chi * static_cast<double>(n), gamma_q);
  if (x.size() >= 2) {
    double area = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    if (area > 0.0)
      for (auto& v : y) v /= area;
  }
  return make_spectrum(std::move(x), std::move(y), Unit::hertz, Unit::dimensionless,
                       "coherent_state_spectrum(n_bar=" + format_double(n_bar) +
                           ", two_chi=" + format_double(two_chi) + ", gamma_q=" + format_double(gamma_q) + ")");
}

double phonon_number_from_shift(double delta_omega_q, double two_chi) {
  if (two_chi == 0.0) throw SingularityError("phonon_number_from_shift: zero dispersive shift");
  return delta_omega_q / two_chi;
}

void write_csv(const DressedSpectrum& s, std::ostream& out) {
  std::vector<double> n(s.phonon_number.begin(), s.phonon_number.end());
  write_two_column_csv(out, "n", "shift_hz", n, s.qubit_shift);
}

}  // namespace qafano::quantum
