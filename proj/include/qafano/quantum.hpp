#pragma once

// Multilevel transmon coupled to one phonon mode (Jaynes-Cummings ladder).
// Frequencies are linear (Hz). The transmon is a Duffing ladder
// E_j = j*omega_q - alpha*j*(j-1)/2 with alpha > 0 the anharmonicity magnitude.

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qafano/spectrum.hpp"

namespace qafano::quantum {

struct TransmonParams {
  double ej = 0.0;      // Josephson energy / h at the operating point
  double ec = 0.0;      // charging energy / h
  double alpha = 0.0;   // anharmonicity magnitude
  int n_levels = 5;
  double ej_max = 0.0;  // metadata

  void validate() const;
};

struct HybridParams {
  double g_m = 0.0;      // qubit-phonon coupling
  double omega_m = 0.0;  // confined mode frequency
  double delta = 0.0;    // omega_q - omega_m at the dispersive operating point
  double omega_c = 0.0;  // readout cavity (metadata)
  double g_cavity = 0.0; // qubit-cavity coupling (metadata)

  double omega_q() const { return omega_m + delta; }
  void validate() const;
};

TransmonParams reference_transmon();
HybridParams reference_hybrid();

struct BranchLabel {
  int ground_state;          // eigenvector index within the N = n block
  int excited_state;         // eigenvector index within the N = n + 1 block
  double ground_overlap;     // |<g,n|psi>|^2
  double excited_overlap;    // |<e,n|psi>|^2
};

struct DressedSpectrum {
  std::vector<int> phonon_number;
  std::vector<double> qubit_shift;
  std::vector<BranchLabel> branch_labels;
};

std::vector<double> transmon_level_frequencies(const TransmonParams& tp, double omega_q);

struct TransmonEstimate {
  double frequency;
  bool asymptotic;  // false when E_J/E_C <= 10 and the estimate is unreliable
};

// sqrt(8 E_J E_C) - E_C.
TransmonEstimate transmon_frequency_estimate(double ej, double ec);

// Signed qubit shift per phonon, 2 chi = -(2 g^2/delta) * alpha/(delta - alpha).
double dispersive_shift(double g_m, double delta, double alpha);

// Basis index of |j, n> (transmon level j, n phonons).
inline int basis_index(int level, int phonons, int n_fock) { return level * n_fock + phonons; }

// Dense real-symmetric JC Hamiltonian of dimension n_levels * n_fock.
Eigen::MatrixXd build_jc_hamiltonian(const TransmonParams& tp, const HybridParams& hp, double omega_q,
                                     int n_fock);

// Eigenvalues of the JC Hamiltonian assembled from excitation-number blocks,
// sorted ascending.
Eigen::VectorXd jc_eigenvalues_blockwise(const TransmonParams& tp, const HybridParams& hp, double omega_q,
                                         int n_fock);

// Qubit shift delta_omega_q(n) for n = 0..n_max relative to n = 0.
DressedSpectrum stark_shift_vs_n(const TransmonParams& tp, const HybridParams& hp, double omega_q, int n_max);
DressedSpectrum stark_shift_vs_n(const TransmonParams& tp, const HybridParams& hp, double omega_q, int n_max,
                                 int n_fock);

// Least-squares slope of shift vs n over the first `n_points` entries.
double stark_slope(const DressedSpectrum& s, int n_points = 3);

struct CrossingBranches {
  std::vector<double> omega_q;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> lower_qubit_weight;  // |<e,0|psi_->|^2
  std::vector<double> upper_qubit_weight;
};

// Single-excitation dressed energies by exact diagonalization of the
// two-level, two-Fock model. Throws DomainError (no crossing) when the grid
// does not bracket omega_m.
CrossingBranches avoided_crossing(const TransmonParams& tp, const HybridParams& hp,
                                  std::span<const double> omega_q_grid);

// Closed form of the same branches.
double crossing_branch(double omega_q, double omega_m, double g_m, int sign);

// Synthetic two-tone spectroscopy map: rows are probe frequencies, columns
// qubit frequencies. Each branch contributes a unit-height Lorentzian of FWHM
// `linewidth` weighted by its qubit character plus `mode_visibility`.
struct TwoToneMap {
  std::vector<double> omega_q;
  std::vector<double> probe;
  Eigen::MatrixXd amplitude;  // probe.size() x omega_q.size()
};

TwoToneMap two_tone_map(const HybridParams& hp, std::span<const double> omega_q_grid,
                        std::span<const double> probe_grid, double linewidth, double mode_visibility = 0.0);

// Highest phonon number kept in the mixture: max(20, ceil(n_bar + 8 sqrt(n_bar))).
int coherent_cutoff(double n_bar);
// Poisson weights for n = 0..cutoff, renormalized to sum to one.
std::vector<double> poisson_weights(double n_bar);

// Unit-area Lorentzian with FWHM `gamma`.
double lorentzian(double x, double centre, double gamma);

// Qubit line dressed by a coherent phonon state: Poisson mixture of
// Lorentzians at omega_q_dressed + two_chi*n. Normalized so the trapezoidal
// integral over `freq_grid` is one.
Spectrum coherent_state_spectrum(double n_bar, double two_chi, double gamma_q, double omega_q_dressed,
                                 std::span<const double> freq_grid);

// Unnormalized mixture value at one frequency (analytic unit area).
double coherent_state_density(double freq, double n_bar, double two_chi, double gamma_q,
                              double omega_q_dressed);

double phonon_number_from_shift(double delta_omega_q, double two_chi);

// CSV `n,shift_hz`.
void write_csv(const DressedSpectrum& s, std::ostream& out);

}  // namespace qafano::quantum
