#include "qafano/pipeline_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "qafano/error.hpp"

namespace qafano::io {

using nlohmann::json;

namespace {

struct Column {
  std::string name;
  Unit unit;
};

Column parse_column(const std::string& raw, int line) {
  static const std::map<std::string, Unit> named = {
      {"freq_hz", Unit::hertz}, {"g_norm", Unit::dimensionless}, {"amplitude", Unit::dimensionless},
      {"n", Unit::dimensionless}, {"shift_hz", Unit::hertz}};
  if (auto it = named.find(raw); it != named.end()) return {raw, it->second};
  // Unit tokens may contain underscores themselves (per_s), so try every split.
  bool any = false;
  for (auto us = raw.find('_'); us != std::string::npos; us = raw.find('_', us + 1)) {
    if (us == 0 || us + 1 == raw.size()) continue;
    any = true;
    try {
      return {raw.substr(0, us), unit_from_token(raw.substr(us + 1))};
    } catch (const Error&) {
    }
  }
  if (!any) throw ParseError("header column '" + raw + "' carries no unit", line);
  throw ParseError("header column '" + raw + "' has an unknown unit", line);
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, int line) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || cell.empty())
    throw ParseError("line " + std::to_string(line) + ": cannot parse '" + cell + "' as a number", line);
  if (!std::isfinite(v)) throw ParseError("line " + std::to_string(line) + ": non-finite value", line);
  return v;
}

// --- JSON helpers ---------------------------------------------------------

class Reader {
 public:
  Reader(const json& j, std::string prefix, ConfigMode mode, std::vector<std::string>* warnings)
      : j_(j), prefix_(std::move(prefix)), mode_(mode), warnings_(warnings) {
    if (!j_.is_object()) throw ValidationError(path("") + " must be an object", {prefix_});
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ValidationError("missing field " + path(key), {path(key)});
    return j_.at(key);
  }

  double number(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_number()) throw ValidationError(path(key) + " must be a number", {path(key)});
    return v.get<double>();
  }

  int integer(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_number_integer()) throw ValidationError(path(key) + " must be an integer", {path(key)});
    return v.get<int>();
  }

  std::complex<double> complex(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ValidationError(path(key) + " must be [re, im]", {path(key)});
    return {v[0].get<double>(), v[1].get<double>()};
  }

  std::optional<double> optional_number(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
    return number(key);
  }

  void finish() {
    for (const auto& [key, value] : j_.items()) {
      if (seen_.count(key)) continue;
      if (mode_ == ConfigMode::strict) throw ValidationError("unknown field " + path(key), {path(key)});
      if (warnings_) warnings_->push_back("ignoring unknown field " + path(key));
    }
  }

  const json& object() const { return j_; }

 private:
  std::string path(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

  const json& j_;
  std::string prefix_;
  ConfigMode mode_;
  std::vector<std::string>* warnings_;
  std::set<std::string> seen_;
};

json complex_json(std::complex<double> c) { return json::array({c.real(), c.imag()}); }

}  // namespace

// ---------------------------------------------------------------------------

Spectrum parse_spectrum(std::istream& in, const ExpectedUnits& expected, const std::string& source) {
  std::string line;
  int lineno = 0;
  std::optional<Column> cx, cy;
  std::vector<std::pair<double, double>> rows;
  std::vector<int> row_lines;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (!cx) {
      if (cells.size() != 2) throw ParseError("header must name exactly two columns", lineno);
      cx = parse_column(cells[0], lineno);
      cy = parse_column(cells[1], lineno);
      continue;
    }
    if (cells.size() != 2)
      throw ParseError("line " + std::to_string(lineno) + ": expected 2 fields, found " +
                           std::to_string(cells.size()),
                       lineno);
    rows.emplace_back(parse_number(cells[0], lineno), parse_number(cells[1], lineno));
    row_lines.push_back(lineno);
  }
  if (!cx) throw ParseError(source + ": empty file", 0);
  if (rows.empty()) throw ParseError(source + ": header only, no data rows", lineno);
  if (expected.x && *expected.x != cx->unit)
    throw UnitMismatchError(source + ": x axis is in " + std::string(unit_token(cx->unit)) + ", expected " +
                            std::string(unit_token(*expected.x)));
  if (expected.y && *expected.y != cy->unit)
    throw UnitMismatchError(source + ": y axis is in " + std::string(unit_token(cy->unit)) + ", expected " +
                            std::string(unit_token(*expected.y)));

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  const bool sorted = std::is_sorted(rows.begin(), rows.end(),
                                     [](const auto& a, const auto& b) { return a.first < b.first; });
  if (!sorted)
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rows[a].first < rows[b].first; });

  Spectrum s;
  s.x_unit = cx->unit;
  s.y_unit = cy->unit;
  s.provenance = sorted ? source : source + " (resorted)";
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto i = order[k];
    if (k > 0 && rows[i].first == s.x.back())
      throw ParseError("line " + std::to_string(row_lines[i]) + ": duplicate abscissa " +
                           format_double(rows[i].first),
                       row_lines[i]);
    s.x.push_back(rows[i].first);
    s.y.push_back(rows[i].second);
  }
  s.validate();
  return s;
}

Spectrum load_spectrum(const std::filesystem::path& path, const ExpectedUnits& expected) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return parse_spectrum(in, expected, path.string());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_spectrum(const std::filesystem::path& path, const Spectrum& s) {
  std::ostringstream out;
  write_spectrum_csv(s, out);
  write_file_atomic(path, out.str());
}

void write_two_tone_csv(const quantum::TwoToneMap& map, std::ostream& out) {
  out << "omega_q_hz,probe_hz,amplitude\n";
  for (std::size_t c = 0; c < map.omega_q.size(); ++c)
    for (std::size_t r = 0; r < map.probe.size(); ++r)
      out << format_double(map.omega_q[c]) << ',' << format_double(map.probe[r]) << ','
          << format_double(map.amplitude(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))) << '\n';
}

quantum::TwoToneMap parse_two_tone_map(std::istream& in, const std::string& source) {
  std::string line;
  int lineno = 0;
  bool header = false;
  std::map<std::pair<double, double>, double> pixels;
  std::set<double> qs, ps;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (!header) {
      if (cells.size() != 3 || cells[0] != "omega_q_hz" || cells[1] != "probe_hz" || cells[2] != "amplitude")
        throw ParseError(source + ": expected header omega_q_hz,probe_hz,amplitude", lineno);
      header = true;
      continue;
    }
    if (cells.size() != 3)
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 fields", lineno);
    const double q = parse_number(cells[0], lineno);
    const double p = parse_number(cells[1], lineno);
    if (!pixels.emplace(std::make_pair(q, p), parse_number(cells[2], lineno)).second)
      throw ParseError("line " + std::to_string(lineno) + ": duplicate pixel", lineno);
    qs.insert(q);
    ps.insert(p);
  }
  if (pixels.empty()) throw ParseError(source + ": no data rows", lineno);
  if (pixels.size() != qs.size() * ps.size()) throw ParseError(source + ": map is not a full rectangular grid", 0);
  quantum::TwoToneMap map;
  map.omega_q.assign(qs.begin(), qs.end());
  map.probe.assign(ps.begin(), ps.end());
  map.amplitude.resize(static_cast<Eigen::Index>(ps.size()), static_cast<Eigen::Index>(qs.size()));
  for (const auto& [key, v] : pixels) {
    const auto c = std::distance(qs.begin(), qs.find(key.first));
    const auto r = std::distance(ps.begin(), ps.find(key.second));
    map.amplitude(r, c) = v;
  }
  return map;
}

quantum::TwoToneMap load_two_tone_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return parse_two_tone_map(in, path.string());
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  std::vector<std::string> bad;
  auto collect = [&bad](const std::string& prefix, auto&& check) {
    try {
      check();
    } catch (const ValidationError& e) {
      for (const auto& f : e.fields()) bad.push_back(prefix + "." + f);
    }
  };
  collect("device", [this] { device.validate(); });
  collect("transmon", [this] { transmon.validate(); });
  collect("hybrid", [this] { hybrid.validate(); });
  collect("loss", [this] { loss.validate(); });
  if (!(attenuation_db >= 0.0) || !std::isfinite(attenuation_db)) bad.push_back("attenuation_db");
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& f : bad) msg += " " + f;
    throw ValidationError(msg, bad);
  }
}

ExperimentConfig reference_config() {
  return {com::reference_device(), quantum::reference_transmon(), quantum::reference_hybrid(),
          lineshape::reference_loss(), 60.0};
}

ExperimentConfig config_from_json(const json& j, ConfigMode mode, std::vector<std::string>* warnings) {
  ExperimentConfig c;
  Reader top(j, "", mode, warnings);

  Reader d(top.at("device"), "device", mode, warnings);
  c.device.lambda_idt = d.number("lambda_idt");
  c.device.lambda_mirror = d.number("lambda_mirror");
  c.device.n_pairs = d.integer("n_pairs");
  c.device.overlap_w = d.number("overlap_w");
  c.device.l_mirror = d.number("l_mirror");
  c.device.l_idt = d.number("l_idt");
  c.device.v_sound = d.number("v_sound");
  c.device.prop_loss = d.number("prop_loss");
  c.device.r_idt = d.complex("r_idt");
  c.device.r_mirror = d.complex("r_mirror");
  c.device.gap = d.optional_number("gap");
  d.finish();

  Reader t(top.at("transmon"), "transmon", mode, warnings);
  c.transmon.ej = t.number("ej");
  c.transmon.ec = t.number("ec");
  c.transmon.alpha = t.number("alpha");
  c.transmon.n_levels = t.integer("n_levels");
  c.transmon.ej_max = t.number("ej_max");
  t.finish();

  Reader h(top.at("hybrid"), "hybrid", mode, warnings);
  c.hybrid.g_m = h.number("g_m");
  c.hybrid.omega_m = h.number("omega_m");
  c.hybrid.delta = h.number("delta");
  c.hybrid.omega_c = h.number("omega_c");
  c.hybrid.g_cavity = h.number("g_cavity");
  h.finish();

  Reader l(top.at("loss"), "loss", mode, warnings);
  c.loss.q_i = l.number("q_i");
  c.loss.gamma_0 = l.number("gamma_0");
  c.loss.n_pairs = l.integer("n_pairs");
  c.loss.omega_idt = l.number("omega_idt");
  l.finish();

  c.attenuation_db = top.number("attenuation_db");
  top.finish();
  c.validate();
  return c;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  auto& d = j["device"];
  d["lambda_idt"] = c.device.lambda_idt;
  d["lambda_mirror"] = c.device.lambda_mirror;
  d["n_pairs"] = c.device.n_pairs;
  d["overlap_w"] = c.device.overlap_w;
  d["l_mirror"] = c.device.l_mirror;
  d["l_idt"] = c.device.l_idt;
  d["v_sound"] = c.device.v_sound;
  d["prop_loss"] = c.device.prop_loss;
  d["r_idt"] = complex_json(c.device.r_idt);
  d["r_mirror"] = complex_json(c.device.r_mirror);
  d["gap"] = c.device.gap ? nlohmann::ordered_json(*c.device.gap) : nlohmann::ordered_json(nullptr);
  auto& t = j["transmon"];
  t["ej"] = c.transmon.ej;
  t["ec"] = c.transmon.ec;
  t["alpha"] = c.transmon.alpha;
  t["n_levels"] = c.transmon.n_levels;
  t["ej_max"] = c.transmon.ej_max;
  auto& h = j["hybrid"];
  h["g_m"] = c.hybrid.g_m;
  h["omega_m"] = c.hybrid.omega_m;
  h["delta"] = c.hybrid.delta;
  h["omega_c"] = c.hybrid.omega_c;
  h["g_cavity"] = c.hybrid.g_cavity;
  auto& l = j["loss"];
  l["q_i"] = c.loss.q_i;
  l["gamma_0"] = c.loss.gamma_0;
  l["n_pairs"] = c.loss.n_pairs;
  l["omega_idt"] = c.loss.omega_idt;
  j["attenuation_db"] = c.attenuation_db;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path, ConfigMode mode,
                             std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  return config_from_json(j, mode, warnings);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  const auto& x = a.device;
  const auto& y = b.device;
  const bool dev = x.lambda_idt == y.lambda_idt && x.lambda_mirror == y.lambda_mirror && x.n_pairs == y.n_pairs &&
                   x.overlap_w == y.overlap_w && x.l_mirror == y.l_mirror && x.l_idt == y.l_idt &&
                   x.v_sound == y.v_sound && x.prop_loss == y.prop_loss && x.r_idt == y.r_idt &&
                   x.r_mirror == y.r_mirror && x.gap == y.gap;
  const bool tr = a.transmon.ej == b.transmon.ej && a.transmon.ec == b.transmon.ec &&
                  a.transmon.alpha == b.transmon.alpha && a.transmon.n_levels == b.transmon.n_levels &&
                  a.transmon.ej_max == b.transmon.ej_max;
  const bool hy = a.hybrid.g_m == b.hybrid.g_m && a.hybrid.omega_m == b.hybrid.omega_m &&
                  a.hybrid.delta == b.hybrid.delta && a.hybrid.omega_c == b.hybrid.omega_c &&
                  a.hybrid.g_cavity == b.hybrid.g_cavity;
  const bool lo = a.loss.q_i == b.loss.q_i && a.loss.gamma_0 == b.loss.gamma_0 &&
                  a.loss.n_pairs == b.loss.n_pairs && a.loss.omega_idt == b.loss.omega_idt;
  return dev && tr && hy && lo && a.attenuation_db == b.attenuation_db;
}

// ---------------------------------------------------------------------------

PowerCalibration calibrate_power(const std::vector<double>& powers, const std::vector<double>& n_bars,
                                 const std::vector<double>& sigma) {
  if (powers.size() != n_bars.size()) throw DomainError("calibrate_power: powers and n_bars lengths differ");
  if (!sigma.empty() && sigma.size() != powers.size())
    throw DomainError("calibrate_power: sigma length differs from data");
  if (powers.size() < 3) throw UnderdeterminedError("calibrate_power: need at least 3 points");
  const auto [mn, mx] = std::minmax_element(powers.begin(), powers.end());
  if (*mn == *mx) throw UnderdeterminedError("calibrate_power: all powers are equal");

  PowerCalibration c;
  c.fit = analysis::fit_line(powers, n_bars, sigma);
  c.slope = c.fit.value("slope");
  c.intercept = c.fit.value("intercept");
  c.slope_sigma = c.fit.error("slope");
  c.intercept_sigma = c.fit.error("intercept");
  c.anomalous_background = std::abs(c.intercept) > 2.0 * c.intercept_sigma;
  return c;
}

std::vector<QPowerRow> q_vs_power_pipeline(const std::vector<std::pair<double, Spectrum>>& spectra,
                                           const analysis::FanoFitOptions& opts) {
  std::vector<QPowerRow> rows;
  rows.reserve(spectra.size());
  for (const auto& [power, s] : spectra) {
    QPowerRow row;
    row.power = power;
    try {
      row.fit = analysis::fit_fano(s, opts);
      row.converged = row.fit.converged;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_q_vs_power_csv(const std::vector<QPowerRow>& rows, std::ostream& out) {
  static const char* names[] = {"n_max", "q", "gamma", "omega_m", "n_off"};
  out << "power";
  for (const char* n : names) out << ',' << n << ',' << n << "_sigma";
  out << ",converged\n";
  const std::string nan = "nan";
  for (const auto& r : rows) {
    out << format_double(r.power);
    for (const char* n : names) {
      const bool ok = r.error.empty();
      out << ',' << (ok ? format_double(r.fit.value(n)) : nan) << ','
          << (ok ? format_double(r.fit.error(n)) : nan);
    }
    out << ',' << (r.converged ? 1 : 0) << '\n';
  }
}

}  // namespace qafano::io
