#include "qafano/saw_com.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "qafano/error.hpp"
#include "qafano/spectrum.hpp"

namespace qafano::com {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr Complex kI{0.0, 1.0};

// Whole periods in a section; a length within 1e-9 of a multiple counts as exact.
long whole_periods(double length, double periodicity) {
  return static_cast<long>(std::floor(length / periodicity + 1e-9));
}

// sin(z)/z for complex z.
Complex sinc_complex(Complex z) {
  if (std::abs(z) < 1e-4) {
    const Complex z2 = z * z;
    return 1.0 - z2 / 6.0 + z2 * z2 / 120.0;
  }
  return std::sin(z) / z;
}

// Integral of exp(i d x) over [a, b].
Complex phase_integral(Complex d, double a, double b) {
  const double w = b - a;
  const double m = 0.5 * (a + b);
  return std::exp(kI * d * m) * w * sinc_complex(d * (0.5 * w));
}

// Running state of the cascade: the field at the current plane is
// phi * (0, u) + w, where u is the (unknown) left-going amplitude at the
// left end. Incoming amplitudes at both outer ends are zero.
struct Cascade {
  Matrix2c phi = Matrix2c::Identity();
  Eigen::Vector2cd w = Eigen::Vector2cd::Zero();

  struct Source {
    Matrix2c phi;
    Eigen::Vector2cd w;
    Complex right;
    Complex left;
  };
  std::vector<Source> sources;

  void apply(const Matrix2c& m) {
    phi = m * phi;
    w = m * w;
  }

  void propagate(Complex kappa, double length) {
    if (length <= 0.0) return;
    const Complex fwd = std::exp(-kI * kappa * length);
    const Complex bwd = std::exp(kI * kappa * length);
    phi.row(0) *= fwd;
    phi.row(1) *= bwd;
    w(0) *= fwd;
    w(1) *= bwd;
  }

  // Point source emitting `right` to the right and `left` to the left.
  void emit(Complex right, Complex left) {
    sources.push_back({phi, w, right, left});
    w(0) += right;
    w(1) -= left;
  }

  // Total power delivered by all sources once both outer boundary conditions hold.
  double delivered_power() const {
    if (sources.empty()) return 0.0;
    const Complex u = -w(1) / phi(1, 1);
    auto flux = [](const Eigen::Vector2cd& v) { return std::norm(v(0)) - std::norm(v(1)); };
    double total = 0.0;
    for (const auto& s : sources) {
      Eigen::Vector2cd before = s.phi.col(1) * u + s.w;
      Eigen::Vector2cd after = before;
      after(0) += s.right;
      after(1) -= s.left;
      total += flux(after) - flux(before);
    }
    return total;
  }
};

void add_transducer(Cascade& c, const ComSection& sec, Complex kappa, int n_sub) {
  const double p = sec.periodicity;
  const long n_periods = whole_periods(sec.length, p);
  const double remainder = sec.length - static_cast<double>(n_periods) * p;
  const double k0 = 2.0 * kPi / p;
  const Complex detune = kappa - k0;
  const Matrix2c refl = reflector_matrix(sec.reflectivity_per_period);
  const double slice = p / n_sub;
  const double mid = 0.5 * p;

  c.propagate(kappa, 0.5 * remainder);
  for (long cell = 0; cell < n_periods; ++cell) {
    const double x0 = 0.5 * remainder + static_cast<double>(cell) * p;
    double pos = 0.0;
    bool reflected = false;
    for (int j = 0; j < n_sub; ++j) {
      const double a = j * slice;
      const double b = a + slice;
      const double centre = 0.5 * (a + b);
      // Source integrals in section coordinates, referenced to the slice centre.
      const double ga = x0 + a;
      const double gb = x0 + b;
      const double gc = x0 + centre;
      const Complex right = std::exp(-kI * kappa * gc) * phase_integral(detune, ga, gb);
      const Complex left = std::exp(kI * kappa * gc) * phase_integral(-detune, ga, gb);

      if (!reflected && std::abs(centre - mid) < 1e-9 * p) {
        c.propagate(kappa, mid - pos);
        pos = mid;
        c.emit(0.5 * right, 0.5 * left);
        c.apply(refl);
        c.emit(0.5 * right, 0.5 * left);
        reflected = true;
        continue;
      }
      if (!reflected && centre > mid) {
        c.propagate(kappa, mid - pos);
        c.apply(refl);
        pos = mid;
        reflected = true;
      }
      c.propagate(kappa, centre - pos);
      pos = centre;
      c.emit(right, left);
    }
    if (!reflected) {
      c.propagate(kappa, mid - pos);
      c.apply(refl);
      pos = mid;
    }
    c.propagate(kappa, p - pos);
  }
  c.propagate(kappa, 0.5 * remainder);
}

void add_passive(Cascade& c, const ComSection& sec, double freq, double v_sound, double prop_loss,
                 Complex kappa) {
  if (sec.kind == SectionKind::free) {
    c.propagate(kappa, sec.length);
    return;
  }
  const long n = whole_periods(sec.length, sec.periodicity);
  const double remainder = sec.length - static_cast<double>(n) * sec.periodicity;
  c.propagate(kappa, 0.5 * remainder);
  c.apply(matrix_power(period_cell(freq, sec.periodicity, sec.reflectivity_per_period, v_sound, prop_loss), n));
  c.propagate(kappa, 0.5 * remainder);
}

Matrix2c passive_transfer(std::span<const ComSection> sections, double freq, double v_sound,
                          double prop_loss) {
  Cascade c;
  const double k = 2.0 * kPi * freq / v_sound;
  const Complex kappa{k, -prop_loss};
  for (const auto& sec : sections) {
    if (sec.kind == SectionKind::transducer) {
      // Reflections only; transduction is irrelevant for the phase condition.
      ComSection grating = sec;
      grating.kind = SectionKind::mirror;
      add_passive(c, grating, freq, v_sound, prop_loss, kappa);
    } else {
      add_passive(c, sec, freq, v_sound, prop_loss, kappa);
    }
  }
  return c.phi;
}

double wrap_phase(double phi) { return std::remainder(phi, 2.0 * kPi); }

}  // namespace

// ---------------------------------------------------------------------------

void DeviceParams::validate() const {
  std::vector<std::string> bad;
  if (!(lambda_idt > 0.0)) bad.push_back("lambda_idt");
  if (!(lambda_mirror > 0.0)) bad.push_back("lambda_mirror");
  if (n_pairs < 1) bad.push_back("n_pairs");
  if (!(overlap_w > 0.0)) bad.push_back("overlap_w");
  if (!(l_mirror > 0.0)) bad.push_back("l_mirror");
  if (!(l_idt > 0.0)) bad.push_back("l_idt");
  if (!(v_sound > 0.0)) bad.push_back("v_sound");
  if (!(prop_loss >= 0.0)) bad.push_back("prop_loss");
  if (!(std::abs(r_idt) < 1.0)) bad.push_back("r_idt");
  if (!(std::abs(r_mirror) < 1.0)) bad.push_back("r_mirror");
  if (gap && !(*gap >= 0.0)) bad.push_back("gap");
  if (!bad.empty()) {
    std::string msg = "invalid device parameters:";
    for (const auto& f : bad) msg += " " + f;
    throw ValidationError(msg, bad);
  }
}

DeviceParams reference_device() {
  DeviceParams p;
  p.lambda_idt = 800e-9;
  p.lambda_mirror = 816e-9;
  p.n_pairs = 16;
  p.overlap_w = 35e-6;
  p.l_mirror = 240.72e-6;
  p.l_idt = 12e-6;
  p.v_sound = 3638.0;
  p.prop_loss = 500.0;
  p.r_idt = Complex{0.0, -0.005};
  p.r_mirror = Complex{0.0, -0.005};
  return p;
}

double mirror_penetration_depth(double lambda_mirror, double r_mag) {
  if (!(r_mag > 0.0)) throw DomainError("mirror_penetration_depth: reflectivity must be positive");
  return lambda_mirror / (2.0 * r_mag);
}

double effective_cavity_length(double l_idt, double l_p) {
  if (l_idt < 0.0 || l_p < 0.0) throw DomainError("effective_cavity_length: negative length");
  return l_idt + 2.0 * l_p;
}

double free_spectral_range(double v_sound, double l_eff) {
  if (!(l_eff > 0.0)) throw DomainError("free_spectral_range: effective length must be positive");
  return v_sound / (2.0 * l_eff);
}

double mirror_stopband_width(double r_mag, double f_center) {
  if (!(r_mag >= 0.0 && r_mag < 1.0)) throw DomainError("mirror_stopband_width: |r| outside [0, 1)");
  if (!(f_center > 0.0)) throw DomainError("mirror_stopband_width: center frequency must be positive");
  return 2.0 * r_mag * f_center / kPi;
}

double idt_center_frequency(double v_sound, double lambda_idt) {
  if (!(lambda_idt > 0.0)) throw DomainError("idt_center_frequency: periodicity must be positive");
  return v_sound / lambda_idt;
}

double mirror_center_frequency(const DeviceParams& p) { return idt_center_frequency(p.v_sound, p.lambda_mirror); }

DesignReport design_report(const DeviceParams& p) {
  p.validate();
  DesignReport r{};
  r.penetration_depth = mirror_penetration_depth(p.lambda_mirror, std::abs(p.r_mirror));
  r.effective_length = effective_cavity_length(p.l_idt, r.penetration_depth);
  r.free_spectral_range = free_spectral_range(p.v_sound, r.effective_length);
  r.idt_center = idt_center_frequency(p.v_sound, p.lambda_idt);
  r.mirror_center = mirror_center_frequency(p);
  r.stopband_width = mirror_stopband_width(std::abs(p.r_mirror), r.mirror_center);
  return r;
}

// ---------------------------------------------------------------------------

Matrix2c reflector_matrix(Complex r) {
  const double mag = std::abs(r);
  if (mag == 0.0) return Matrix2c::Identity();
  if (!(mag < 1.0)) throw DomainError("reflector_matrix: |r| must be < 1");
  const Complex t = kI * std::sqrt(1.0 - mag * mag) * (r / mag);
  Matrix2c m;
  m << (t * t - r * r) / t, r / t, -r / t, 1.0 / t;
  return m;
}

Matrix2c propagation_matrix(double wavenumber, double prop_loss, double length) {
  const Complex kappa{wavenumber, -prop_loss};
  Matrix2c m = Matrix2c::Zero();
  m(0, 0) = std::exp(-kI * kappa * length);
  m(1, 1) = std::exp(kI * kappa * length);
  return m;
}

Matrix2c period_cell(double freq, double periodicity, Complex r, double v_sound, double prop_loss) {
  const double k = 2.0 * kPi * freq / v_sound;
  const Matrix2c half = propagation_matrix(k, prop_loss, 0.5 * periodicity);
  return half * reflector_matrix(r) * half;
}

CellScattering scattering_from_transfer(const Matrix2c& m) {
  if (m(1, 1) == Complex{}) throw SingularityError("scattering_from_transfer: M22 = 0");
  return {-m(1, 0) / m(1, 1), m.determinant() / m(1, 1)};
}

Matrix2c matrix_power(Matrix2c m, long n) {
  if (n < 0) throw DomainError("matrix_power: negative exponent");
  Matrix2c result = Matrix2c::Identity();
  while (n > 0) {
    if (n & 1) result = result * m;
    m = m * m;
    n >>= 1;
  }
  return result;
}

// ---------------------------------------------------------------------------

ConductanceSpectrum idt_conductance(std::span<const double> freqs, const DeviceParams& p) {
  const double f0 = idt_center_frequency(p.v_sound, p.lambda_idt);
  ConductanceSpectrum out;
  out.freqs.assign(freqs.begin(), freqs.end());
  out.g_norm.reserve(freqs.size());
  for (double f : freqs) {
    const double x = kPi * p.n_pairs * (f - f0) / f0;
    const double s = x == 0.0 ? 1.0 : std::sin(x) / x;
    out.g_norm.push_back(s * s);
  }
  return out;
}

std::vector<ComSection> resonator_sections(const DeviceParams& p, bool idt_reflection) {
  const double gap = p.gap ? *p.gap : resonant_gap(p, mirror_center_frequency(p));
  const ComSection mirror{SectionKind::mirror, p.l_mirror, p.lambda_mirror, p.r_mirror};
  const ComSection spacer{SectionKind::free, gap, 0.0, {}};
  const ComSection idt{SectionKind::transducer, p.n_pairs * p.lambda_idt, p.lambda_idt,
                       idt_reflection ? p.r_idt : Complex{}};
  return {mirror, spacer, idt, spacer, mirror};
}

std::vector<double> structure_power(std::span<const double> freqs, std::span<const ComSection> sections,
                                    double v_sound, double prop_loss, int n_subsections) {
  if (n_subsections < 1) throw DomainError("n_subsections must be >= 1");
  for (const auto& s : sections) {
    if (s.length < 0.0) throw DomainError("section with negative length");
    if (s.kind != SectionKind::free && !(s.periodicity > 0.0))
      throw DomainError("periodic section needs a positive periodicity");
  }
  std::vector<double> power(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const double f = freqs[i];
    const double k = 2.0 * kPi * f / v_sound;
    const Complex kappa{k, -prop_loss};
    Cascade c;
    for (const auto& sec : sections) {
      if (sec.kind == SectionKind::transducer)
        add_transducer(c, sec, kappa, n_subsections);
      else
        add_passive(c, sec, f, v_sound, prop_loss, kappa);
    }
    power[i] = c.delivered_power();
  }
  return power;
}

double estimated_mode_linewidth(const DeviceParams& p) {
  const double r = std::abs(p.r_mirror);
  if (r == 0.0) return std::numeric_limits<double>::infinity();
  const long n = whole_periods(p.l_mirror, p.lambda_mirror);
  const double l_eff = effective_cavity_length(p.l_idt, mirror_penetration_depth(p.lambda_mirror, r));
  const double mirror = std::tanh(static_cast<double>(n) * r);
  const double rho = mirror * mirror * std::exp(-2.0 * p.prop_loss * l_eff);
  const double fsr = free_spectral_range(p.v_sound, l_eff);
  return fsr * (1.0 - rho) / (kPi * std::sqrt(rho));
}

ConductanceSpectrum composite_conductance(std::span<const double> freqs, const DeviceParams& p,
                                          const ComOptions& opts) {
  p.validate();
  if (freqs.empty()) throw DomainError("composite_conductance: empty frequency grid");
  for (std::size_t i = 1; i < freqs.size(); ++i)
    if (!(freqs[i] > freqs[i - 1])) throw DomainError("composite_conductance: frequencies not increasing");

  if (opts.check_refinement && std::abs(p.r_mirror) > 0.0) {
    const double fc = mirror_center_frequency(p);
    const double half_band = 0.5 * mirror_stopband_width(std::abs(p.r_mirror), fc);
    const double limit = 0.25 * estimated_mode_linewidth(p);
    for (std::size_t i = 1; i < freqs.size(); ++i) {
      const bool overlaps = freqs[i] >= fc - half_band && freqs[i - 1] <= fc + half_band;
      if (overlaps && freqs[i] - freqs[i - 1] > limit)
        throw RefinementError("composite_conductance: grid step " + format_double(freqs[i] - freqs[i - 1]) +
                              " Hz inside the stop band exceeds a quarter of the expected mode width (" +
                              format_double(limit) + " Hz)");
    }
  }

  const auto sections = resonator_sections(p, opts.idt_reflection);
  auto power = structure_power(freqs, sections, p.v_sound, p.prop_loss, opts.n_subsections);
  const double peak = *std::max_element(power.begin(), power.end());
  ConductanceSpectrum out;
  out.freqs.assign(freqs.begin(), freqs.end());
  out.g_norm.resize(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) {
    double g = peak > 0.0 ? power[i] / peak : 0.0;
    if (g < 0.0 && g > -1e-12) g = 0.0;
    out.g_norm[i] = g;
  }
  return out;
}

ConductanceSpectrum composite_conductance(std::span<const double> freqs, const DeviceParams& p,
                                          int n_subsections) {
  ComOptions o;
  o.n_subsections = n_subsections;
  return composite_conductance(freqs, p, o);
}

double resonant_gap(const DeviceParams& p, double f_target) {
  if (std::abs(p.r_mirror) == 0.0) return 0.0;
  const double k = 2.0 * kPi * f_target / p.v_sound;
  const ComSection mirror{SectionKind::mirror, p.l_mirror, p.lambda_mirror, p.r_mirror};
  const ComSection idt{SectionKind::transducer, p.n_pairs * p.lambda_idt, p.lambda_idt, p.r_idt};
  const Matrix2c left = passive_transfer(std::span(&mirror, 1), f_target, p.v_sound, p.prop_loss);
  const Complex gamma_left = left(0, 1) / left(1, 1);

  const double period = kPi / (2.0 * k);
  double gap = 0.0;
  for (int iter = 0; iter < 50; ++iter) {
    const ComSection spacer{SectionKind::free, gap, 0.0, {}};
    const ComSection rest[] = {spacer, idt, spacer, mirror};
    const Matrix2c right = passive_transfer(rest, f_target, p.v_sound, p.prop_loss);
    const Complex gamma_right = -right(1, 0) / right(1, 1);
    const double phase = wrap_phase(std::arg(gamma_left * gamma_right));
    gap += phase / (4.0 * k);
    gap = std::fmod(gap, period);
    if (gap < 0.0) gap += period;
    if (std::abs(phase) < 1e-13) break;
  }
  return gap;
}

// ---------------------------------------------------------------------------

ModeSummary confined_mode_summary(const ConductanceSpectrum& s) {
  const auto& g = s.g_norm;
  const auto& f = s.freqs;
  if (g.size() < 3 || g.size() != f.size()) throw AmbiguityError("confined_mode_summary: spectrum too short");
  const auto imax = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
  const double peak = g[imax];
  if (!(peak > 0.0)) throw AmbiguityError("confined_mode_summary: no peak");
  const double half = 0.5 * peak;

  std::size_t l = imax;
  while (l > 0 && g[l] >= half) --l;
  std::size_t r = imax;
  while (r + 1 < g.size() && g[r] >= half) ++r;
  if (g[l] >= half || g[r] >= half)
    throw AmbiguityError("confined_mode_summary: peak not bracketed by half-maximum crossings");

  for (std::size_t i = 0; i < g.size(); ++i)
    if ((i < l || i > r) && g[i] >= half)
      throw AmbiguityError("confined_mode_summary: several peaks above half maximum");

  auto cross = [&](std::size_t lo, std::size_t hi) {
    return f[lo] + (half - g[lo]) * (f[hi] - f[lo]) / (g[hi] - g[lo]);
  };
  const double f_left = cross(l, l + 1);
  const double f_right = cross(r - 1, r);
  const double fwhm = f_right - f_left;
  return {f[imax], fwhm, f[imax] / fwhm};
}

std::vector<std::size_t> secondary_maxima(const ConductanceSpectrum& s, double min_prominence) {
  const auto& g = s.g_norm;
  std::vector<std::size_t> out;
  if (g.size() < 3) return out;
  const auto imax = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
  const double threshold = min_prominence * g[imax];
  for (std::size_t i = 1; i + 1 < g.size(); ++i) {
    if (i == imax || !(g[i] > g[i - 1] && g[i] >= g[i + 1])) continue;
    std::size_t a = i;
    while (a > 0 && g[a - 1] <= g[a]) --a;
    std::size_t b = i;
    while (b + 1 < g.size() && g[b + 1] <= g[b]) ++b;
    const double base = std::max(g[a], g[b]);
    if (g[i] - base >= threshold) out.push_back(i);
  }
  return out;
}

std::vector<double> transducer_grid(const DeviceParams& p, std::size_t n) {
  const double f0 = idt_center_frequency(p.v_sound, p.lambda_idt);
  const double span = 2.5 * f0 / p.n_pairs;
  return linspace(f0 - span, f0 + span, n);
}

std::vector<double> resonance_grid(const DeviceParams& p, std::size_t n) {
  const double fc = mirror_center_frequency(p);
  const double band = mirror_stopband_width(std::abs(p.r_mirror), fc);
  if (!(band > 0.0)) throw DomainError("resonance_grid: mirrors have no stop band");
  return linspace(fc - 3.0 * band, fc + 3.0 * band, n);
}

std::vector<double> refined_transducer_grid(const DeviceParams& p, std::size_t n_coarse, std::size_t n_fine) {
  const auto coarse = transducer_grid(p, n_coarse);
  const auto fine = resonance_grid(p, n_fine);
  std::vector<double> out;
  out.reserve(coarse.size() + fine.size());
  for (double f : coarse)
    if (f < fine.front() || f > fine.back()) out.push_back(f);
  out.insert(out.end(), fine.begin(), fine.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void write_csv(const ConductanceSpectrum& s, std::ostream& out) {
  write_two_column_csv(out, "freq_hz", "g_norm", s.freqs, s.g_norm);
}

}  // namespace qafano::com
