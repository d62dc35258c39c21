#pragma once

// Closed-form spectral models: Fano absorption of the confined mode, the
// transducer-limited qubit loss rate, the coupled-oscillator estimate of the
// Fano parameter, and the classical two-oscillator steady state.

#include <complex>
#include <span>
#include <vector>

namespace qafano::lineshape {

struct FanoParams {
  double n_max = 0.0;   // peak scale
  double q = 0.0;       // asymmetry
  double gamma = 0.0;   // FWHM of the confined mode (Hz)
  double omega_m = 0.0; // resonance (Hz)
  double n_off = 0.0;   // continuum background

  void validate() const;
};

// n_max * (1 + q^2 - (q*gamma/2 + w - w_m)^2 / ((gamma/2)^2 + (w - w_m)^2)) + n_off
double fano_absorption(double omega, const FanoParams& p);

// Every Fano curve has two parametrizations, (n_max, q, n_off) and
// (-n_max q^2, -1/q, n_off + n_max (1 + q^2)). Returns the one with |q| <= 1.
FanoParams fold_fano_branch(const FanoParams& p);

struct LossParams {
  double q_i = 0.0;        // internal quality factor
  double gamma_0 = 0.0;    // peak conversion rate, 1/s
  int n_pairs = 1;
  double omega_idt = 0.0;  // transducer centre (Hz)

  void validate() const;
};

LossParams reference_loss();

// Unnormalized sinc, sin(x)/x with sinc(0) = 1.
double sinc(double x);

// Gamma_1 in 1/s at qubit frequency f_q (Hz). The internal term uses the
// angular frequency 2*pi*f_q.
double loss_rate(double f_q, const LossParams& p);

// Positive root of sinc^2(x) = 1/2, by bisection to 1e-12.
double sinc2_half_point();

double sinc2_main_lobe_fwhm(int n_pairs, double omega_idt);

double predict_fano_q(double omega_saw, double omega_idt, double gamma_idt);

enum class DrivenOscillator { first, second };

struct OscillatorPairParams {
  double omega_1 = 0.0;  // confined mode
  double omega_2 = 0.0;  // lossy continuum proxy
  double gamma_1 = 0.0;
  double gamma_2 = 0.0;
  double kappa = 0.0;    // bilinear coupling, frequency^2
  double drive_amp = 1.0;
  DrivenOscillator driven = DrivenOscillator::second;
};

struct OscillatorResponse {
  std::vector<double> freqs;
  std::vector<std::complex<double>> x1;
  std::vector<std::complex<double>> x2;
};

// Steady state of
//   (w_k^2 - w^2 - i g_k w) x_k + kappa x_other = F_k
// at every grid frequency. Throws SingularityError where the system is singular.
OscillatorResponse coupled_oscillator_response(std::span<const double> freq_grid, const OscillatorPairParams& p);

// Diagonal coefficient w_k^2 - w^2 - i g_k w.
std::complex<double> oscillator_coefficient(double omega_k, double gamma_k, double w);

// |x2|^2 divided by the power response of the bare continuum oscillator
// |F / (w_2^2 - w^2 - i g_2 w)|^2. This is the Fano profile imprinted on the
// driven continuum by the confined mode.
std::vector<double> continuum_normalized_power(const OscillatorResponse& r, const OscillatorPairParams& p);

}  // namespace qafano::lineshape
