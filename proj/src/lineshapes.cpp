#include "qafano/lineshapes.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "qafano/error.hpp"

namespace qafano::lineshape {

void FanoParams::validate() const {
  std::vector<std::string> bad;
  if (!(gamma > 0.0)) bad.push_back("gamma");
  if (!(n_max >= 0.0)) bad.push_back("n_max");
  if (!(n_off >= 0.0)) bad.push_back("n_off");
  if (!std::isfinite(q)) bad.push_back("q");
  if (!bad.empty()) {
    std::string msg = "invalid Fano parameters:";
    for (const auto& f : bad) msg += " " + f;
    throw ValidationError(msg, bad);
  }
}

double fano_absorption(double omega, const FanoParams& p) {
  const double hw = 0.5 * p.gamma;
  const double d = omega - p.omega_m;
  const double num = p.q * hw + d;
  return p.n_max * (1.0 + p.q * p.q - num * num / (hw * hw + d * d)) + p.n_off;
}

FanoParams fold_fano_branch(const FanoParams& p) {
  if (std::abs(p.q) <= 1.0) return p;
  FanoParams f = p;
  f.n_max = -p.n_max * p.q * p.q;
  f.q = -1.0 / p.q;
  f.n_off = p.n_off + p.n_max * (1.0 + p.q * p.q);
  return f;
}

void LossParams::validate() const {
  std::vector<std::string> bad;
  if (!(q_i > 0.0)) bad.push_back("q_i");
  if (!(gamma_0 >= 0.0)) bad.push_back("gamma_0");
  if (n_pairs < 1) bad.push_back("n_pairs");
  if (!(omega_idt > 0.0)) bad.push_back("omega_idt");
  if (!bad.empty()) {
    std::string msg = "invalid loss parameters:";
    for (const auto& f : bad) msg += " " + f;
    throw ValidationError(msg, bad);
  }
}

LossParams reference_loss() { return {1.05e4, 0.252e9, 16, 4.504e9}; }

double sinc(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

double loss_rate(double f_q, const LossParams& p) {
  if (!(f_q > 0.0)) throw DomainError("loss_rate: qubit frequency must be positive");
  const double s = sinc(std::numbers::pi * p.n_pairs * (f_q - p.omega_idt) / p.omega_idt);
  return 2.0 * std::numbers::pi * f_q / p.q_i + p.gamma_0 * s * s;
}

double sinc2_half_point() {
  // sinc^2 falls monotonically from 1 to 0 on (0, pi).
  double lo = 0.0;
  double hi = std::numbers::pi;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    const double s = sinc(mid);
    if (s * s > 0.5)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double sinc2_main_lobe_fwhm(int n_pairs, double omega_idt) {
  if (n_pairs < 1) throw DomainError("sinc2_main_lobe_fwhm: n_pairs must be >= 1");
  return 2.0 * sinc2_half_point() * omega_idt / (std::numbers::pi * n_pairs);
}

double predict_fano_q(double omega_saw, double omega_idt, double gamma_idt) {
  if (!(gamma_idt > 0.0)) throw DomainError("predict_fano_q: gamma_idt must be positive");
  if (omega_saw == 0.0) throw DomainError("predict_fano_q: omega_saw must be non-zero");
  return (omega_saw * omega_saw - omega_idt * omega_idt) / (gamma_idt * omega_saw);
}

std::complex<double> oscillator_coefficient(double omega_k, double gamma_k, double w) {
  return {omega_k * omega_k - w * w, -gamma_k * w};
}

OscillatorResponse coupled_oscillator_response(std::span<const double> freq_grid, const OscillatorPairParams& p) {
  OscillatorResponse r;
  r.freqs.assign(freq_grid.begin(), freq_grid.end());
  r.x1.reserve(freq_grid.size());
  r.x2.reserve(freq_grid.size());
  const double f1 = p.driven == DrivenOscillator::first ? p.drive_amp : 0.0;
  const double f2 = p.driven == DrivenOscillator::second ? p.drive_amp : 0.0;
  for (double w : freq_grid) {
    const auto a1 = oscillator_coefficient(p.omega_1, p.gamma_1, w);
    const auto a2 = oscillator_coefficient(p.omega_2, p.gamma_2, w);
    const auto det = a1 * a2 - p.kappa * p.kappa;
    const double scale = std::abs(a1 * a2) + p.kappa * p.kappa;
    if (std::abs(det) <= 1e-15 * scale || det == 0.0)
      throw SingularityError("coupled_oscillator_response: singular system at " + std::to_string(w) + " Hz");
    // Cramer's rule
    r.x1.push_back((f1 * a2 - p.kappa * f2) / det);
    r.x2.push_back((a1 * f2 - p.kappa * f1) / det);
  }
  return r;
}

std::vector<double> continuum_normalized_power(const OscillatorResponse& r, const OscillatorPairParams& p) {
  std::vector<double> out(r.freqs.size());
  for (std::size_t i = 0; i < r.freqs.size(); ++i) {
    const auto a2 = oscillator_coefficient(p.omega_2, p.gamma_2, r.freqs[i]);
    out[i] = std::norm(r.x2[i]) * std::norm(a2) / (p.drive_amp * p.drive_amp);
  }
  return out;
}

}  // namespace qafano::lineshape
