#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "qafano/analysis.hpp"
#include "qafano/error.hpp"
#include "qafano/lineshapes.hpp"
#include "qafano/pipeline_io.hpp"
#include "qafano/quantum.hpp"
#include "qafano/saw_com.hpp"

namespace qafano::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace {

class NotConverged : public Error {
 public:
  using Error::Error;
};

enum Section : unsigned { kDevice = 1, kTransmon = 2, kHybrid = 4, kLoss = 8 };

struct Override {
  const char* flag;
  unsigned sections;
  const char* help;
  std::function<void(io::ExperimentConfig&, double)> apply;
};

int as_int(double v, const std::string& flag) {
  if (v != std::floor(v)) throw ValidationError("--" + flag + " must be an integer", {flag});
  return static_cast<int>(v);
}

// Magnitude override that keeps the reflectivity phase.
std::complex<double> with_magnitude(std::complex<double> r, double mag) {
  const double phase = std::abs(r) > 0.0 ? std::arg(r) : -M_PI / 2.0;
  return std::polar(mag, phase);
}

const std::vector<Override>& overrides() {
  static const std::vector<Override> table = {
      {"lambda-idt", kDevice, "transducer periodicity (m)", [](auto& c, double v) { c.device.lambda_idt = v; }},
      {"lambda-mirror", kDevice, "mirror periodicity (m)", [](auto& c, double v) { c.device.lambda_mirror = v; }},
      {"n-pairs", kDevice | kLoss, "transducer finger pairs (device and loss model)",
       [](auto& c, double v) { c.device.n_pairs = c.loss.n_pairs = as_int(v, "n-pairs"); }},
      {"l-mirror", kDevice, "mirror length (m)", [](auto& c, double v) { c.device.l_mirror = v; }},
      {"l-idt", kDevice, "transducer length (m)", [](auto& c, double v) { c.device.l_idt = v; }},
      {"v-sound", kDevice, "SAW velocity (m/s)", [](auto& c, double v) { c.device.v_sound = v; }},
      {"prop-loss", kDevice, "propagation loss (Np/m)", [](auto& c, double v) { c.device.prop_loss = v; }},
      {"gap", kDevice, "mirror-transducer spacing (m); default tunes the mode to the mirror centre",
       [](auto& c, double v) { c.device.gap = v; }},
      {"r-mirror", kDevice, "mirror reflectivity magnitude per period",
       [](auto& c, double v) { c.device.r_mirror = with_magnitude(c.device.r_mirror, v); }},
      {"r-idt", kDevice, "transducer reflectivity magnitude per period",
       [](auto& c, double v) { c.device.r_idt = with_magnitude(c.device.r_idt, v); }},
      {"ej", kTransmon, "Josephson energy (Hz)", [](auto& c, double v) { c.transmon.ej = v; }},
      {"ec", kTransmon, "charging energy (Hz)", [](auto& c, double v) { c.transmon.ec = v; }},
      {"alpha", kTransmon, "anharmonicity magnitude (Hz)", [](auto& c, double v) { c.transmon.alpha = v; }},
      {"n-levels", kTransmon, "transmon levels kept",
       [](auto& c, double v) { c.transmon.n_levels = as_int(v, "n-levels"); }},
      {"g-m", kHybrid, "qubit-phonon coupling (Hz)", [](auto& c, double v) { c.hybrid.g_m = v; }},
      {"omega-m", kHybrid, "confined mode frequency (Hz)", [](auto& c, double v) { c.hybrid.omega_m = v; }},
      {"delta", kHybrid, "qubit-mode detuning (Hz)", [](auto& c, double v) { c.hybrid.delta = v; }},
      {"q-i", kLoss, "internal quality factor", [](auto& c, double v) { c.loss.q_i = v; }},
      {"gamma-0", kLoss, "peak conversion rate (1/s)", [](auto& c, double v) { c.loss.gamma_0 = v; }},
      {"omega-idt", kLoss, "transducer centre frequency (Hz)", [](auto& c, double v) { c.loss.omega_idt = v; }},
  };
  return table;
}

struct ConfigFlags {
  std::string path;
  bool lenient = false;
  std::map<std::string, std::pair<double, CLI::Option*>> values;
};

void add_config_flags(CLI::App* sub, ConfigFlags& cf, unsigned sections) {
  sub->add_option("--config", cf.path, "experiment configuration JSON (default: reference device)");
  sub->add_flag("--lenient-config", cf.lenient, "warn about unknown config keys instead of failing");
  for (const auto& o : overrides()) {
    if (!(o.sections & sections)) continue;
    auto& slot = cf.values[o.flag];
    slot.second = sub->add_option(std::string("--") + o.flag, slot.first, o.help);
  }
}

io::ExperimentConfig resolve_config(const ConfigFlags& cf, std::ostream& err) {
  io::ExperimentConfig c = io::reference_config();
  if (!cf.path.empty()) {
    std::vector<std::string> warnings;
    c = io::load_config(cf.path, cf.lenient ? io::ConfigMode::lenient : io::ConfigMode::strict, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';
  }
  for (const auto& o : overrides()) {
    auto it = cf.values.find(o.flag);
    if (it != cf.values.end() && it->second.second->count() > 0) o.apply(c, it->second.first);
  }
  c.validate();
  return c;
}

// Collects artifacts under the output root and writes the manifest last.
class Run {
 public:
  Run(fs::path root, std::string command_line) : root_(std::move(root)), command_line_(std::move(command_line)) {}

  void write(const std::string& name, const std::string& contents) {
    io::write_file_atomic(root_ / name, contents);
    outputs_.push_back(name);
  }

  void write_json(const std::string& name, const ojson& j) { write(name, j.dump(2) + "\n"); }

  template <class F>
  void write_stream(const std::string& name, F&& fill) {
    std::ostringstream os;
    fill(os);
    write(name, os.str());
  }

  void finish(const io::ExperimentConfig& config) {
    ojson m;
    m["command_line"] = command_line_;
    m["config_hash"] = fnv1a_hex(io::config_to_json(config).dump());
    m["toolkit_version"] = kVersion;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    m["timestamp"] = stamp;
    m["outputs"] = outputs_;
    io::write_file_atomic(root_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::string command_line_;
  std::vector<std::string> outputs_;
};

ojson fit_json(const fit::FitResult& r, const std::string& model) {
  ojson j;
  j["model"] = model;
  const auto body = fit::to_json(r);
  for (const auto& [k, v] : body.items()) j[k] = v;
  return j;
}

ojson spectrum_summary(const com::ConductanceSpectrum& s) {
  ojson j;
  try {
    const auto m = com::confined_mode_summary(s);
    j["peak_hz"] = m.f_peak;
    j["fwhm_hz"] = m.fwhm;
    j["q_factor"] = m.q_factor;
  } catch (const AmbiguityError& e) {
    j["peak_error"] = e.what();
  }
  j["side_maxima"] = com::secondary_maxima(s, 0.01).size();
  return j;
}

std::vector<double> grid_around(double centre, double half_span, std::size_t n) {
  return linspace(centre - half_span, centre + half_span, n);
}

// --- subcommands -----------------------------------------------------------

void cmd_design(Run& run, const io::ExperimentConfig& c, std::ostream& out) {
  const auto d = com::design_report(c.device);
  ojson j;
  j["penetration_depth_m"] = d.penetration_depth;
  j["effective_length_m"] = d.effective_length;
  j["free_spectral_range_hz"] = d.free_spectral_range;
  j["stopband_width_hz"] = d.stopband_width;
  j["idt_center_hz"] = d.idt_center;
  j["mirror_center_hz"] = d.mirror_center;
  run.write_json("design.json", j);
  out << std::fixed << std::setprecision(3);
  out << "L_P        " << std::setw(12) << d.penetration_depth * 1e6 << " um\n";
  out << "L_eff      " << std::setw(12) << d.effective_length * 1e6 << " um\n";
  out << "FSR        " << std::setw(12) << d.free_spectral_range / 1e6 << " MHz\n";
  out << "stop band  " << std::setw(12) << d.stopband_width / 1e6 << " MHz\n";
  out << "f_IDT      " << std::setw(12) << d.idt_center / 1e9 << " GHz\n";
  out << "f_mirror   " << std::setw(12) << d.mirror_center / 1e9 << " GHz\n";
  out << std::defaultfloat;
}

struct ComArgs {
  std::string span = "resonance";
  double f_min = 0.0, f_max = 0.0;
  std::size_t points = 4001;
  bool idt_only = false;
  bool with_idt = false;
  int subsections = 2;
  bool no_idt_reflection = false;
};

void cmd_com_sim(Run& run, const io::ExperimentConfig& c, const ComArgs& a, std::ostream& out) {
  std::vector<double> grid;
  if (a.f_max > a.f_min) {
    grid = linspace(a.f_min, a.f_max, a.points);
  } else if (a.span == "transducer") {
    grid = com::transducer_grid(c.device, a.points);
  } else if (a.span == "transducer-refined") {
    grid = com::refined_transducer_grid(c.device, a.points);
  } else {
    grid = com::resonance_grid(c.device, a.points);
  }
  ojson summary;
  if (!a.idt_only) {
    com::ComOptions opts;
    opts.n_subsections = a.subsections;
    opts.idt_reflection = !a.no_idt_reflection;
    const auto s = com::composite_conductance(grid, c.device, opts);
    run.write_stream("conductance.csv", [&](std::ostream& os) { com::write_csv(s, os); });
    summary["composite"] = spectrum_summary(s);
    if (summary["composite"].contains("q_factor"))
      out << "confined mode at " << summary["composite"]["peak_hz"].get<double>() << " Hz, Q = "
          << summary["composite"]["q_factor"].get<double>() << '\n';
  }
  if (a.idt_only || a.with_idt) {
    const auto s = com::idt_conductance(grid, c.device);
    run.write_stream(a.idt_only ? "conductance.csv" : "idt_conductance.csv",
                     [&](std::ostream& os) { com::write_csv(s, os); });
  }
  summary["points"] = grid.size();
  run.write_json("com_summary.json", summary);
}

struct StarkArgs {
  int n_max = 5;
  double omega_q = 0.0;
  int n_fock = 0;
};

void cmd_stark(Run& run, const io::ExperimentConfig& c, const StarkArgs& a, std::ostream& out) {
  const double wq = a.omega_q > 0.0 ? a.omega_q : c.hybrid.omega_q();
  auto hp = c.hybrid;
  hp.delta = wq - hp.omega_m;
  const auto s = a.n_fock > 0 ? quantum::stark_shift_vs_n(c.transmon, hp, wq, a.n_max, a.n_fock)
                              : quantum::stark_shift_vs_n(c.transmon, hp, wq, a.n_max);
  run.write_stream("stark.csv", [&](std::ostream& os) { quantum::write_csv(s, os); });
  const double slope = quantum::stark_slope(s, std::min(3, a.n_max + 1));
  const double chi = quantum::dispersive_shift(hp.g_m, hp.delta, c.transmon.alpha);
  ojson j;
  j["omega_q_hz"] = wq;
  j["ed_slope_hz"] = slope;
  j["dispersive_shift_hz"] = chi;
  j["relative_deviation"] = (slope - chi) / chi;
  run.write_json("stark_summary.json", j);
  out << "ED slope " << slope << " Hz/phonon, perturbative " << chi << " Hz/phonon\n";
}

struct CrossingArgs {
  double q_min = 0.0, q_max = 0.0;
  std::size_t q_points = 81, probe_points = 801;
  double linewidth = 2e6;
  double visibility = 0.0;
  bool fit = false;
};

void cmd_crossing_sim(Run& run, const io::ExperimentConfig& c, const CrossingArgs& a, std::ostream& out) {
  const double wm = c.hybrid.omega_m;
  const double half = 8.0 * std::max(c.hybrid.g_m, a.linewidth);
  const auto qs = a.q_max > a.q_min ? linspace(a.q_min, a.q_max, a.q_points) : grid_around(wm, half, a.q_points);
  const auto probe = grid_around(wm, half + 2.0 * c.hybrid.g_m, a.probe_points);
  const auto branches = quantum::avoided_crossing(c.transmon, c.hybrid, qs);
  run.write_stream("branches.csv", [&](std::ostream& os) {
    os << "omega_q_hz,lower_hz,upper_hz\n";
    for (std::size_t i = 0; i < branches.omega_q.size(); ++i)
      os << format_double(branches.omega_q[i]) << ',' << format_double(branches.lower[i]) << ','
         << format_double(branches.upper[i]) << '\n';
  });
  const auto map = quantum::two_tone_map(c.hybrid, qs, probe, a.linewidth, a.visibility);
  run.write_stream("crossing_map.csv", [&](std::ostream& os) { io::write_two_tone_csv(map, os); });
  if (a.fit) {
    const auto r = analysis::extract_avoided_crossing(map);
    run.write_json("crossing_fit.json", fit_json(r, "crossing"));
    out << "g_m = " << r.value("g_m") << " +/- " << r.error("g_m") << " Hz\n";
    if (!r.converged) throw NotConverged("crossing fit did not converge");
  }
}

struct CoherentArgs {
  double n_bar = 1.0;
  double gamma_q = 0.5e6;
  double omega_q0 = 0.0;
  double two_chi = 0.0;
  std::size_t points = 2001;
  double noise = 0.0;
  unsigned seed = 1;
};

double default_two_chi(const io::ExperimentConfig& c) {
  return quantum::dispersive_shift(c.hybrid.g_m, c.hybrid.delta, c.transmon.alpha);
}

void cmd_coherent_sim(Run& run, const io::ExperimentConfig& c, const CoherentArgs& a, std::ostream& out) {
  const double two_chi = a.two_chi != 0.0 ? a.two_chi : default_two_chi(c);
  const double w0 = a.omega_q0 > 0.0 ? a.omega_q0 : c.hybrid.omega_q();
  const int cutoff = quantum::coherent_cutoff(a.n_bar);
  const double lo = std::min(w0, w0 + two_chi * cutoff) - 20.0 * a.gamma_q;
  const double hi = std::max(w0, w0 + two_chi * cutoff) + 20.0 * a.gamma_q;
  const auto grid = linspace(lo, hi, a.points);
  auto s = quantum::coherent_state_spectrum(a.n_bar, two_chi, a.gamma_q, w0, grid);
  if (a.noise > 0.0) {
    std::mt19937_64 rng(a.seed);
    std::normal_distribution<double> gauss(0.0, a.noise);
    for (auto& y : s.y) y += gauss(rng);
  }
  run.write_stream("coherent.csv", [&](std::ostream& os) { write_two_column_csv(os, "freq_hz", "amplitude", s.x, s.y); });
  out << "coherent spectrum, n_bar = " << a.n_bar << ", 2chi = " << two_chi << " Hz\n";
}

struct FitArgs {
  std::string model;
  std::string data;
  std::map<std::string, double> init;
  std::map<std::string, CLI::Option*> init_opts;
  double two_chi = 0.0;
  bool allow_dip = false;
  int max_iter = 200;
};

std::optional<double> init_value(const FitArgs& a, const std::string& key) {
  auto it = a.init_opts.find(key);
  if (it == a.init_opts.end() || it->second->count() == 0) return std::nullopt;
  return a.init.at(key);
}

void cmd_fit(Run& run, const io::ExperimentConfig& c, const FitArgs& a, std::ostream& out) {
  fit::FitOptions fo;
  fo.max_iter = a.max_iter;
  fit::FitResult r;
  if (a.model == "fano") {
    const auto s = io::load_spectrum(a.data, {Unit::hertz, std::nullopt});
    analysis::FanoFitOptions opts;
    opts.fit = fo;
    opts.non_negative = !a.allow_dip;
    auto guess = a.allow_dip ? analysis::fano_extremum_guess(s) : analysis::fano_initial_guess(s);
    if (auto v = init_value(a, "n-max")) guess.n_max = *v;
    if (auto v = init_value(a, "q")) guess.q = *v;
    if (auto v = init_value(a, "gamma")) guess.gamma = *v;
    if (auto v = init_value(a, "omega-m")) guess.omega_m = *v;
    if (auto v = init_value(a, "n-off")) guess.n_off = *v;
    opts.init = guess;
    r = analysis::fit_fano(s, opts);
  } else if (a.model == "loss") {
    const auto s = io::load_spectrum(a.data, {Unit::hertz, Unit::per_second});
    std::optional<lineshape::LossParams> init;
    if (auto v = init_value(a, "q-i")) {
      init = c.loss;
      init->q_i = *v;
      if (auto g = init_value(a, "gamma-0")) init->gamma_0 = *g;
      if (auto w = init_value(a, "omega-idt")) init->omega_idt = *w;
    }
    r = analysis::fit_loss(s, c.loss.n_pairs, init, fo);
  } else if (a.model == "coherent") {
    const auto s = io::load_spectrum(a.data, {Unit::hertz, std::nullopt});
    r = analysis::fit_coherent(s, a.two_chi != 0.0 ? a.two_chi : default_two_chi(c), fo);
  } else if (a.model == "crossing") {
    const auto map = io::load_two_tone_map(a.data);
    analysis::CrossingInit ci;
    ci.g_m = init_value(a, "g-m");
    ci.omega_m = init_value(a, "omega-m");
    r = analysis::extract_avoided_crossing(map, ci, fo);
  } else {
    const auto s = io::load_spectrum(a.data);
    r = analysis::fit_line(s.x, s.y, {}, fo);
  }
  run.write_json("fit_" + a.model + ".json", fit_json(r, a.model));
  for (std::size_t i = 0; i < r.names.size(); ++i)
    out << r.names[i] << " = " << r.params(static_cast<Eigen::Index>(i)) << " +/- "
        << r.sigma(static_cast<Eigen::Index>(i)) << '\n';
  if (!r.converged) throw NotConverged(a.model + " fit did not converge");
}

struct PredictArgs {
  double omega_saw = 0.0, omega_idt = 0.0, gamma_idt = 0.0;
};

void cmd_predict_q(Run& run, const io::ExperimentConfig& c, const PredictArgs& a, std::ostream& out) {
  const double ws = a.omega_saw > 0.0 ? a.omega_saw : c.hybrid.omega_m;
  const double wi = a.omega_idt > 0.0 ? a.omega_idt : c.loss.omega_idt;
  const double gi = a.gamma_idt > 0.0 ? a.gamma_idt : lineshape::sinc2_main_lobe_fwhm(c.loss.n_pairs, wi);
  const double q = lineshape::predict_fano_q(ws, wi, gi);
  ojson j;
  j["q_predicted"] = q;
  j["omega_saw_hz"] = ws;
  j["omega_idt_hz"] = wi;
  j["gamma_idt_hz"] = gi;
  run.write_json("predict_q.json", j);
  out << "q = " << q << '\n';
}

struct OscArgs {
  double omega_1 = 0.0, omega_2 = 0.0, gamma_1 = 0.0, gamma_2 = 0.0;
  double gamma_ratio = 3000.0;
  double coupling = 0.0;
  double span = 20e6;
  std::size_t points = 2001;
  std::string drive = "second";
};

void cmd_oscillators(Run& run, const io::ExperimentConfig& c, const OscArgs& a, std::ostream& out) {
  lineshape::OscillatorPairParams p;
  p.omega_1 = a.omega_1 > 0.0 ? a.omega_1 : c.hybrid.omega_m;
  p.omega_2 = a.omega_2 > 0.0 ? a.omega_2 : c.loss.omega_idt;
  p.gamma_2 = a.gamma_2 > 0.0 ? a.gamma_2 : lineshape::sinc2_main_lobe_fwhm(c.loss.n_pairs, p.omega_2);
  p.gamma_1 = a.gamma_1 > 0.0 ? a.gamma_1 : p.gamma_2 / a.gamma_ratio;
  const double g = a.coupling > 0.0 ? a.coupling : c.hybrid.g_m;
  p.kappa = 2.0 * g * p.omega_1;
  p.driven = a.drive == "first" ? lineshape::DrivenOscillator::first : lineshape::DrivenOscillator::second;
  const auto grid = grid_around(p.omega_1, a.span, a.points);
  const auto resp = lineshape::coupled_oscillator_response(grid, p);
  const auto power = lineshape::continuum_normalized_power(resp, p);
  const auto s = make_spectrum(grid, power, Unit::hertz, Unit::dimensionless, "oscillators");
  run.write_stream("oscillators.csv", [&](std::ostream& os) { write_spectrum_csv(s, os); });

  analysis::FanoFitOptions opts;
  opts.non_negative = false;
  opts.extremum_guess = true;
  const auto r = analysis::fit_fano(s, opts);
  const auto folded = lineshape::fold_fano_branch(analysis::fano_params(r));
  const double q_pred = lineshape::predict_fano_q(p.omega_1, p.omega_2, p.gamma_2);
  ojson j;
  j["q_fit"] = folded.q;
  j["q_predicted"] = q_pred;
  j["relative_deviation"] = (folded.q - q_pred) / q_pred;
  j["gamma_fit_hz"] = folded.gamma;
  j["omega_fit_hz"] = folded.omega_m;
  j["converged"] = r.converged;
  run.write_json("oscillator_fit.json", j);
  out << "fitted q = " << folded.q << ", predicted q = " << q_pred << '\n';
  if (!r.converged) throw NotConverged("oscillator Fano fit did not converge");
}

struct PipelineArgs {
  std::string index;
  bool allow_dip = false;
};

// Index file: header `power_w,path`; relative paths resolve against the index.
std::vector<std::pair<double, Spectrum>> load_index(const fs::path& index) {
  std::ifstream in(index);
  if (!in) throw ParseError("cannot open " + index.string(), 0);
  std::string line;
  int lineno = 0;
  std::vector<std::pair<double, Spectrum>> out;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "power_w,path") throw ParseError(index.string() + ": expected header power_w,path", lineno);
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("line " + std::to_string(lineno) + ": missing path", lineno);
    double power = 0.0;
    try {
      std::size_t used = 0;
      power = std::stod(line.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": bad power", lineno);
    }
    fs::path p = line.substr(comma + 1);
    if (p.is_relative()) p = index.parent_path() / p;
    out.emplace_back(power, io::load_spectrum(p, {Unit::hertz, std::nullopt}));
  }
  if (out.empty()) throw ParseError(index.string() + ": no spectra listed", lineno);
  return out;
}

void run_pipeline(Run& run, const PipelineArgs& a, std::ostream& out) {
  const auto spectra = load_index(a.index);
  analysis::FanoFitOptions opts;
  opts.non_negative = !a.allow_dip;
  opts.extremum_guess = a.allow_dip;
  const auto rows = io::q_vs_power_pipeline(spectra, opts);
  run.write_stream("q_vs_power.csv", [&](std::ostream& os) { io::write_q_vs_power_csv(rows, os); });
  std::size_t bad = 0;
  for (const auto& r : rows) bad += r.converged ? 0 : 1;
  out << rows.size() << " spectra fitted, " << bad << " flagged\n";
  if (bad > 0) throw NotConverged(std::to_string(bad) + " fits flagged");
}

struct CalibArgs {
  std::string data;
};

void cmd_calibrate(Run& run, const CalibArgs& a, std::ostream& out) {
  const auto s = io::load_spectrum(a.data, {std::nullopt, Unit::dimensionless});
  const auto c = io::calibrate_power(s.x, s.y);
  ojson j;
  j["slope"] = c.slope;
  j["slope_sigma"] = c.slope_sigma;
  j["intercept"] = c.intercept;
  j["intercept_sigma"] = c.intercept_sigma;
  j["anomalous_background"] = c.anomalous_background;
  j["power_unit"] = unit_token(s.x_unit);
  j["fit"] = fit::to_json(c.fit);
  run.write_json("calibration.json", j);
  out << "n_bar = (" << c.slope << " +/- " << c.slope_sigma << ") P + " << c.intercept << '\n';
  if (c.anomalous_background) out << "warning: intercept exceeds twice its uncertainty\n";
}

struct SynthArgs {
  std::string model = "fano";
  double n_max = 1.0, q = -0.25, gamma = 0.63e6, omega_m = 0.0, n_off = 0.0;
  double span = 10.0;  // in linewidths
  std::size_t points = 401;
  double noise = 0.0;
  unsigned seed = 1;
  double rel_noise = 0.0;
};

void cmd_synth(Run& run, const io::ExperimentConfig& c, const SynthArgs& a, std::ostream& out) {
  std::mt19937_64 rng(a.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Spectrum s;
  if (a.model == "fano") {
    lineshape::FanoParams p{a.n_max, a.q, a.gamma, a.omega_m > 0.0 ? a.omega_m : c.hybrid.omega_m, a.n_off};
    p.validate();
    const auto grid = grid_around(p.omega_m, a.span * p.gamma, a.points);
    std::vector<double> y;
    for (double w : grid) y.push_back(lineshape::fano_absorption(w, p) + a.noise * gauss(rng));
    s = make_spectrum(grid, y, Unit::hertz, Unit::dimensionless, "synth fano");
  } else {
    const double half = 2.0 * lineshape::sinc2_main_lobe_fwhm(c.loss.n_pairs, c.loss.omega_idt);
    const auto grid = grid_around(c.loss.omega_idt, half, a.points);
    std::vector<double> y;
    for (double f : grid) {
      const double v = lineshape::loss_rate(f, c.loss);
      y.push_back(v * (1.0 + a.rel_noise * gauss(rng)));
    }
    s = make_spectrum(grid, y, Unit::hertz, Unit::per_second, "synth loss");
  }
  run.write_stream(a.model + ".csv", [&](std::ostream& os) { write_spectrum_csv(s, os); });
  out << "wrote " << s.size() << " points\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SAW resonator / qubit spectroscopy toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string out_dir = ".";
  app.add_option("--out-dir", out_dir, "root directory for all output files");

  ConfigFlags cf_design, cf_com, cf_stark, cf_cross, cf_coh, cf_fit, cf_pred, cf_osc, cf_synth;

  auto* design = app.add_subcommand("design", "closed-form resonator design quantities");
  add_config_flags(design, cf_design, kDevice);

  ComArgs com_args;
  auto* com_sim = app.add_subcommand("com-sim", "coupling-of-modes conductance spectrum");
  add_config_flags(com_sim, cf_com, kDevice);
  com_sim->add_option("--span", com_args.span, "grid preset")
      ->check(CLI::IsMember({"resonance", "transducer", "transducer-refined"}));
  com_sim->add_option("--f-min", com_args.f_min, "grid start (Hz); overrides --span with --f-max");
  com_sim->add_option("--f-max", com_args.f_max, "grid end (Hz)");
  com_sim->add_option("--points", com_args.points, "grid points")->check(CLI::Range(2, 10000000));
  com_sim->add_flag("--idt-only", com_args.idt_only, "transducer alone, no mirrors");
  com_sim->add_flag("--with-idt", com_args.with_idt, "also write the bare transducer curve");
  com_sim->add_option("--subsections", com_args.subsections, "source points per transducer period")
      ->check(CLI::Range(1, 64));
  com_sim->add_flag("--no-idt-reflection", com_args.no_idt_reflection, "ignore transducer reflectivity");

  StarkArgs stark_args;
  auto* stark = app.add_subcommand("stark", "ac Stark shift by exact diagonalization");
  add_config_flags(stark, cf_stark, kTransmon | kHybrid);
  stark->add_option("--n-max", stark_args.n_max, "highest phonon number")->check(CLI::Range(0, 200));
  stark->add_option("--omega-q", stark_args.omega_q, "qubit frequency (Hz); default omega_m + delta");
  stark->add_option("--n-fock", stark_args.n_fock, "Fock cutoff; default n_max + levels + 5");

  CrossingArgs cross_args;
  auto* cross = app.add_subcommand("crossing-sim", "qubit-phonon avoided crossing and two-tone map");
  add_config_flags(cross, cf_cross, kTransmon | kHybrid);
  cross->add_option("--q-min", cross_args.q_min, "lowest qubit frequency (Hz)");
  cross->add_option("--q-max", cross_args.q_max, "highest qubit frequency (Hz)");
  cross->add_option("--q-points", cross_args.q_points, "qubit frequency points")->check(CLI::Range(3, 100000));
  cross->add_option("--probe-points", cross_args.probe_points, "probe frequency points")
      ->check(CLI::Range(3, 100000));
  cross->add_option("--linewidth", cross_args.linewidth, "branch FWHM in the map (Hz)");
  cross->add_option("--visibility", cross_args.visibility, "phonon-branch visibility floor");
  cross->add_flag("--fit", cross_args.fit, "extract g_m from the simulated map");

  CoherentArgs coh_args;
  auto* coh = app.add_subcommand("coherent-sim", "qubit spectrum dressed by a coherent phonon state");
  add_config_flags(coh, cf_coh, kTransmon | kHybrid);
  coh->add_option("--n-bar", coh_args.n_bar, "mean phonon number")->check(CLI::NonNegativeNumber);
  coh->add_option("--gamma-q", coh_args.gamma_q, "qubit FWHM (Hz)")->check(CLI::PositiveNumber);
  coh->add_option("--omega-q0", coh_args.omega_q0, "dressed qubit frequency (Hz)");
  coh->add_option("--two-chi", coh_args.two_chi, "shift per phonon (Hz); default from the dispersive formula");
  coh->add_option("--points", coh_args.points, "grid points")->check(CLI::Range(3, 10000000));
  coh->add_option("--noise", coh_args.noise, "additive Gaussian noise sigma")->check(CLI::NonNegativeNumber);
  coh->add_option("--seed", coh_args.seed, "noise seed");

  FitArgs fit_args;
  auto* fitc = app.add_subcommand("fit", "fit a model to a data file");
  add_config_flags(fitc, cf_fit, kTransmon | kHybrid | kLoss);
  fitc->add_option("--model", fit_args.model, "model to fit")
      ->required()
      ->check(CLI::IsMember({"fano", "loss", "coherent", "crossing", "line"}));
  fitc->add_option("--data", fit_args.data, "input CSV")->required()->check(CLI::ExistingFile);
  for (const char* k : {"n-max", "q", "gamma", "omega-m", "n-off", "q-i", "gamma-0", "omega-idt", "g-m"})
    fit_args.init_opts[k] =
        fitc->add_option(std::string("--init-") + k, fit_args.init[k], std::string("initial ") + k);
  fitc->add_option("--two-chi", fit_args.two_chi, "fixed shift per phonon for the coherent model (Hz)");
  fitc->add_flag("--allow-dip", fit_args.allow_dip, "signed Fano amplitude, start at the largest deviation from the median");
  fitc->add_option("--max-iter", fit_args.max_iter, "iteration limit")->check(CLI::PositiveNumber);

  PredictArgs pred_args;
  auto* pred = app.add_subcommand("predict-q", "Fano asymmetry from transducer detuning");
  add_config_flags(pred, cf_pred, kHybrid | kLoss);
  pred->add_option("--omega-saw", pred_args.omega_saw, "confined mode (Hz); default omega_m");
  pred->add_option("--omega-idt-center", pred_args.omega_idt, "transducer centre (Hz); default loss.omega_idt");
  pred->add_option("--gamma-idt", pred_args.gamma_idt, "transducer FWHM (Hz); default sinc^2 main-lobe width");

  OscArgs osc_args;
  auto* osc = app.add_subcommand("oscillators", "two coupled driven oscillators and their Fano fit");
  add_config_flags(osc, cf_osc, kHybrid | kLoss);
  osc->add_option("--omega-1", osc_args.omega_1, "confined oscillator (Hz); default omega_m");
  osc->add_option("--omega-2", osc_args.omega_2, "continuum oscillator (Hz); default omega_idt");
  osc->add_option("--gamma-1", osc_args.gamma_1, "confined damping (Hz); default gamma_2 / gamma-ratio");
  osc->add_option("--gamma-2", osc_args.gamma_2, "continuum damping (Hz); default transducer width");
  osc->add_option("--gamma-ratio", osc_args.gamma_ratio, "gamma_2 / gamma_1")->check(CLI::PositiveNumber);
  osc->add_option("--coupling", osc_args.coupling, "coupling g (Hz); kappa = 2 g omega_1; default g_m");
  osc->add_option("--span", osc_args.span, "half width of the grid around omega_1 (Hz)");
  osc->add_option("--points", osc_args.points, "grid points")->check(CLI::Range(5, 10000000));
  osc->add_option("--drive", osc_args.drive, "driven oscillator")->check(CLI::IsMember({"first", "second"}));

  PipelineArgs pipe_args;
  auto* pipe = app.add_subcommand("pipeline-q-vs-power", "Fano fit of every spectrum in a power series");
  pipe->add_option("--index", pipe_args.index, "CSV with header power_w,path")->required()->check(CLI::ExistingFile);
  pipe->add_flag("--allow-dip", pipe_args.allow_dip, "signed Fano amplitude, start at the largest deviation from the median");

  CalibArgs cal_args;
  auto* cal = app.add_subcommand("calibrate-power", "linear phonon number vs drive power");
  cal->add_option("--data", cal_args.data, "CSV of power vs n_bar")->required()->check(CLI::ExistingFile);

  SynthArgs syn_args;
  auto* syn = app.add_subcommand("synth", "synthetic Fano or loss-rate data");
  add_config_flags(syn, cf_synth, kHybrid | kLoss);
  syn->add_option("--model", syn_args.model, "model")->check(CLI::IsMember({"fano", "loss"}));
  syn->add_option("--n-max", syn_args.n_max, "Fano amplitude");
  syn->add_option("--q", syn_args.q, "Fano asymmetry");
  syn->add_option("--gamma", syn_args.gamma, "Fano FWHM (Hz)");
  syn->add_option("--center", syn_args.omega_m, "Fano centre (Hz); default omega_m");
  syn->add_option("--n-off", syn_args.n_off, "Fano background");
  syn->add_option("--span", syn_args.span, "half width in linewidths (Fano)");
  syn->add_option("--points", syn_args.points, "grid points")->check(CLI::Range(5, 10000000));
  syn->add_option("--noise", syn_args.noise, "additive noise sigma (Fano)")->check(CLI::NonNegativeNumber);
  syn->add_option("--rel-noise", syn_args.rel_noise, "relative noise (loss)")->check(CLI::NonNegativeNumber);
  syn->add_option("--seed", syn_args.seed, "noise seed");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  std::string command_line;
  for (std::size_t i = 0; i < args.size(); ++i) command_line += (i ? " " : "") + args[i];
  Run run(out_dir, command_line);
  io::ExperimentConfig config = io::reference_config();

  try {
    if (design->parsed()) {
      config = resolve_config(cf_design, err);
      cmd_design(run, config, out);
    } else if (com_sim->parsed()) {
      config = resolve_config(cf_com, err);
      cmd_com_sim(run, config, com_args, out);
    } else if (stark->parsed()) {
      config = resolve_config(cf_stark, err);
      cmd_stark(run, config, stark_args, out);
    } else if (cross->parsed()) {
      config = resolve_config(cf_cross, err);
      cmd_crossing_sim(run, config, cross_args, out);
    } else if (coh->parsed()) {
      config = resolve_config(cf_coh, err);
      cmd_coherent_sim(run, config, coh_args, out);
    } else if (fitc->parsed()) {
      config = resolve_config(cf_fit, err);
      cmd_fit(run, config, fit_args, out);
    } else if (pred->parsed()) {
      config = resolve_config(cf_pred, err);
      cmd_predict_q(run, config, pred_args, out);
    } else if (osc->parsed()) {
      config = resolve_config(cf_osc, err);
      cmd_oscillators(run, config, osc_args, out);
    } else if (pipe->parsed()) {
      run_pipeline(run, pipe_args, out);
    } else if (cal->parsed()) {
      cmd_calibrate(run, cal_args, out);
    } else if (syn->parsed()) {
      config = resolve_config(cf_synth, err);
      cmd_synth(run, config, syn_args, out);
    }
  } catch (const NotConverged& e) {
    err << "error: " << e.what() << '\n';
    run.finish(config);
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const SingularityError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const RankDeficientError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const BranchError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  run.finish(config);
  return 0;
}

}  // namespace qafano::cli
