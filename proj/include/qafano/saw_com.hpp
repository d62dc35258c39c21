#pragma once

// Coupling-of-modes / transfer-matrix model of a SAW Fabry-Perot resonator
// (Bragg mirror, interdigitated transducer, Bragg mirror) and the closed-form
// design quantities derived from its geometry.
//
// All frequencies are linear (Hz), all lengths in metres. Amplitudes use the
// convention a+(x) ~ exp(-i k x) for the right-going wave; the pair
// (a+, a-) at a plane is mapped across a section by a 2x2 transfer matrix.

#include <complex>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace qafano::com {

using Complex = std::complex<double>;
using Matrix2c = Eigen::Matrix2cd;

struct DeviceParams {
  double lambda_idt = 0.0;     // transducer periodicity
  double lambda_mirror = 0.0;  // mirror periodicity
  int n_pairs = 0;             // finger pairs
  double overlap_w = 0.0;      // aperture (metadata; conductance is normalized)
  double l_mirror = 0.0;
  double l_idt = 0.0;
  double v_sound = 0.0;
  double prop_loss = 0.0;  // amplitude attenuation, Np/m
  Complex r_idt{};         // reflectivity per transducer period
  Complex r_mirror{};      // reflectivity per mirror period
  // Free spacing between each mirror and the transducer. Empty means "tune it
  // so the cavity resonance sits at the mirror Bragg frequency".
  std::optional<double> gap;

  // Throws ValidationError naming each offending field.
  void validate() const;
};

// Device of the reference hybrid system.
DeviceParams reference_device();

enum class SectionKind { mirror, transducer, free };

struct ComSection {
  SectionKind kind = SectionKind::free;
  double length = 0.0;
  double periodicity = 0.0;  // unused for free sections
  Complex reflectivity_per_period{};
};

struct ConductanceSpectrum {
  std::vector<double> freqs;
  std::vector<double> g_norm;
};

// --- closed-form design quantities -------------------------------------

double mirror_penetration_depth(double lambda_mirror, double r_mag);
double effective_cavity_length(double l_idt, double l_p);
double free_spectral_range(double v_sound, double l_eff);
// r_mag = 0 is accepted and returns 0.
double mirror_stopband_width(double r_mag, double f_center);
double idt_center_frequency(double v_sound, double lambda_idt);
// Bragg frequency of the mirror grating, v / lambda_mirror.
double mirror_center_frequency(const DeviceParams& p);

struct DesignReport {
  double penetration_depth;
  double effective_length;
  double free_spectral_range;
  double stopband_width;
  double idt_center;
  double mirror_center;
};

DesignReport design_report(const DeviceParams& p);

// --- transfer-matrix primitives -----------------------------------------

// Lossless symmetric partial reflector with reflection r; transmission is
// chosen so the 2x2 scattering matrix is unitary.
Matrix2c reflector_matrix(Complex r);
Matrix2c propagation_matrix(double wavenumber, double prop_loss, double length);
// One grating period: half propagation, reflector, half propagation.
Matrix2c period_cell(double freq, double periodicity, Complex r, double v_sound, double prop_loss);

struct CellScattering {
  Complex reflection;
  Complex transmission;
};

// Reflection and transmission for a wave incident from the left.
CellScattering scattering_from_transfer(const Matrix2c& m);

// Integer power by repeated squaring.
Matrix2c matrix_power(Matrix2c m, long n);

// --- spectra --------------------------------------------------------------

// sinc^2(pi N_p (f - f_IDT)/f_IDT): the reflection-free transducer. Equals 1
// exactly at f = f_IDT.
ConductanceSpectrum idt_conductance(std::span<const double> freqs, const DeviceParams& p);

struct ComOptions {
  // Lumped transduction points per transducer period. The source integral of
  // each sub-slice is exact; the count only sets how finely the source
  // interacts with in-transducer reflections.
  int n_subsections = 2;
  // Include the transducer's own reflectivity r_idt.
  bool idt_reflection = true;
  // Check that the stop band is sampled finely enough for the confined mode.
  bool check_refinement = true;
};

// Cascade of sections for the device: [mirror, gap, transducer, gap, mirror].
std::vector<ComSection> resonator_sections(const DeviceParams& p, bool idt_reflection = true);

// Power delivered by the transducer(s) of an arbitrary section list, without
// normalization. Every entry is >= 0 up to rounding.
std::vector<double> structure_power(std::span<const double> freqs, std::span<const ComSection> sections,
                                    double v_sound, double prop_loss, int n_subsections);

// Max-normalized input conductance of the full resonator.
ConductanceSpectrum composite_conductance(std::span<const double> freqs, const DeviceParams& p,
                                          const ComOptions& opts = {});
ConductanceSpectrum composite_conductance(std::span<const double> freqs, const DeviceParams& p,
                                          int n_subsections);

// Mirror-to-transducer spacing in [0, lambda/4) that places the round-trip
// phase condition at f_target.
double resonant_gap(const DeviceParams& p, double f_target);

// Fabry-Perot estimate of the confined-mode FWHM from mirror strength and loss.
double estimated_mode_linewidth(const DeviceParams& p);

struct ModeSummary {
  double f_peak;
  double fwhm;
  double q_factor;
};

// Dominant peak of a spectrum. Throws AmbiguityError when no peak or more
// than one separate region rises above half the maximum.
ModeSummary confined_mode_summary(const ConductanceSpectrum& s);

// Indices of local maxima other than the global one, each with prominence of
// at least `min_prominence` (relative to the maximum) over its neighbouring minima.
std::vector<std::size_t> secondary_maxima(const ConductanceSpectrum& s, double min_prominence);

// Default grids: transducer scale (f_IDT +/- 2.5 f_IDT/N_p) and resonance
// scale (mirror center +/- 3 stop-band widths).
std::vector<double> transducer_grid(const DeviceParams& p, std::size_t n = 2001);
std::vector<double> resonance_grid(const DeviceParams& p, std::size_t n = 4001);
// Transducer-scale grid merged with a resonance-scale grid over the stop band.
std::vector<double> refined_transducer_grid(const DeviceParams& p, std::size_t n_coarse = 2001,
                                            std::size_t n_fine = 4001);

// CSV with header `freq_hz,g_norm`.
void write_csv(const ConductanceSpectrum& s, std::ostream& out);

}  // namespace qafano::com
