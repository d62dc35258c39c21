#pragma once

// Model fits of the analysis chain, built on the generic fitter.

#include <optional>
#include <vector>

#include "qafano/fitting.hpp"
#include "qafano/lineshapes.hpp"
#include "qafano/quantum.hpp"
#include "qafano/spectrum.hpp"

namespace qafano::analysis {

// Deterministic starting point: omega_m at the data maximum, gamma from the
// data FWHM, n_off the data minimum, n_max = max - min, q = 0.
lineshape::FanoParams fano_initial_guess(const Spectrum& s);

// Start for curves whose strongest feature may be a dip: baseline at the data
// median, omega_m at the largest deviation from it, n_max that signed
// deviation, gamma the width where the deviation exceeds half of it, q = 0.
lineshape::FanoParams fano_extremum_guess(const Spectrum& s);

struct FanoFitOptions {
  fit::FitOptions fit;
  std::optional<lineshape::FanoParams> init;
  // Without `init`: start from fano_extremum_guess instead of fano_initial_guess.
  bool extremum_guess = false;
  // Physical phonon spectra: n_max >= 0, n_off >= 0. Disable to fit dips.
  bool non_negative = true;
  std::vector<double> sigma;  // per-point uncertainty, empty for unit weights
};

// Parameters in order n_max, q, gamma, omega_m, n_off.
fit::FitResult fit_fano(const Spectrum& s, const FanoFitOptions& opts = {});
lineshape::FanoParams fano_params(const fit::FitResult& r);

// Parameters q_i, gamma_0, omega_idt; n_pairs is held fixed.
fit::FitResult fit_loss(const Spectrum& s, int n_pairs, std::optional<lineshape::LossParams> init = {},
                        const fit::FitOptions& opts = {});

// Coherent-state qubit line with a fixed dispersive shift two_chi. Parameters
// n_bar, omega_q0, gamma_q, amplitude (area), offset.
fit::FitResult fit_coherent(const Spectrum& s, double two_chi, const fit::FitOptions& opts = {});

// Straight line y = slope * x + intercept.
fit::FitResult fit_line(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& sigma = {}, const fit::FitOptions& opts = {});

struct Ridge {
  double omega_q;
  double lower;
  double upper;
};

// Per-column peak finding; columns without two peaks above `threshold` *
// column maximum, separated by a valley below half the weaker one, are skipped.
std::vector<Ridge> extract_ridges(const quantum::TwoToneMap& map, double threshold = 0.1);

struct CrossingInit {
  std::optional<double> g_m;
  std::optional<double> omega_m;
};

// Fits the dressed-branch model to the two ridges of a two-tone map.
// Parameters g_m, omega_m. The fit runs in g_m^2 >= 0, which stays regular
// at zero coupling; g_m and its error are mapped back from that. Throws
// ExtractionError when fewer than three columns show both branches.
fit::FitResult extract_avoided_crossing(const quantum::TwoToneMap& map, const CrossingInit& init = {},
                                        const fit::FitOptions& opts = {});

}  // namespace qafano::analysis
