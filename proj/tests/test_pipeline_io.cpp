#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "qafano/error.hpp"
#include "qafano/pipeline_io.hpp"

using namespace qafano;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("qafano_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path write(const std::string& name, const std::string& body) const {
    std::ofstream(path / name) << body;
    return path / name;
  }
};

Spectrum parse(const std::string& body, const io::ExpectedUnits& u = {}) {
  std::istringstream in(body);
  return io::parse_spectrum(in, u, "inline");
}

int parse_error_line(const std::string& body) {
  try {
    parse(body);
  } catch (const ParseError& e) {
    return e.line();
  }
  return -1;
}

Spectrum fano_spectrum(const lineshape::FanoParams& p, double noise, unsigned seed) {
  const auto grid = linspace(p.omega_m - 5e6, p.omega_m + 5e6, 401);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  std::vector<double> y;
  for (double w : grid) y.push_back(lineshape::fano_absorption(w, p) + (noise > 0.0 ? n(rng) : 0.0));
  return make_spectrum(grid, y, Unit::hertz, Unit::dimensionless, "synthetic");
}

}  // namespace

TEST_CASE("spectrum loading") {
  TempDir dir;
  SUBCASE("well formed") {
    const auto s = io::load_spectrum(dir.write("a.csv", "x_hz,y_dimensionless\n1e9,0.5\n2e9,0.25\n3e9,1\n"));
    CHECK(s.size() == 3);
    CHECK(s.x[1] == 2e9);
    CHECK(s.y[2] == 1.0);
    CHECK(s.x_unit == Unit::hertz);
  }
  SUBCASE("named columns") {
    const auto s = parse("freq_hz,g_norm\n4.4e9,0.1\n4.5e9,0.9\n");
    CHECK(s.size() == 2);
    CHECK(s.y_unit == Unit::dimensionless);
  }
  SUBCASE("header only") {
    CHECK_THROWS_AS(io::load_spectrum(dir.write("b.csv", "x_hz,y_dimensionless\n")), ParseError);
  }
  SUBCASE("shuffled rows") {
    const auto s = parse("x_w,y_dimensionless\n3,30\n1,10\n2,20\n");
    CHECK(s.x == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(s.y == std::vector<double>{10.0, 20.0, 30.0});
    CHECK(s.provenance.find("resorted") != std::string::npos);
    CHECK(parse("x_w,y_dimensionless\n1,10\n2,20\n").provenance.find("resorted") == std::string::npos);
  }
  SUBCASE("errors") {
    CHECK(parse_error_line("x_hz,y_dimensionless\n1,2\n2,abc\n") == 3);
    CHECK(parse_error_line("x_hz,y_dimensionless\n1,2\n2,3,4\n") == 3);
    CHECK(parse_error_line("x_hz,y_dimensionless\n1,2\n2,nan\n") == 3);
    CHECK(parse_error_line("x_hz,y_dimensionless\n1,inf\n") == 2);
    CHECK(parse_error_line("x_hz,y_dimensionless\n1,2\n3,4\n1,5\n") > 0);
    CHECK(parse_error_line("x_parsecs,y_dimensionless\n1,2\n") == 1);
    CHECK_THROWS_AS(parse("x_w,y_dimensionless\n1,2\n", {Unit::hertz, {}}), UnitMismatchError);
    CHECK_THROWS_AS(parse("x_hz,y_per_s\n1,2\n", {{}, Unit::dimensionless}), UnitMismatchError);
    CHECK_THROWS_AS(io::load_spectrum(dir.path / "missing.csv"), ParseError);
  }
}

TEST_CASE("spectrum round trip is bit exact") {
  TempDir dir;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x, y;
  double acc = 4.4e9;
  for (int i = 0; i < 500; ++i) {
    acc += std::abs(u(rng)) * 1e3 + 1e-3;
    x.push_back(acc);
    y.push_back(u(rng) * std::pow(10.0, 20.0 * u(rng)));
  }
  y[3] = 5e-324;
  y[4] = -0.0;
  const auto s = make_spectrum(x, y, Unit::hertz, Unit::per_second, "random");
  io::save_spectrum(dir.path / "r.csv", s);
  const auto back = io::load_spectrum(dir.path / "r.csv", {Unit::hertz, Unit::per_second});
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(std::bit_cast<std::uint64_t>(back.x[i]) == std::bit_cast<std::uint64_t>(s.x[i]));
    CHECK(std::bit_cast<std::uint64_t>(back.y[i]) == std::bit_cast<std::uint64_t>(s.y[i]));
  }
  CHECK_FALSE(fs::exists(dir.path / "r.csv.tmp"));
}

TEST_CASE("two-tone map round trip") {
  quantum::HybridParams hp;
  hp.g_m = 9.76e6;
  hp.omega_m = 4.4588e9;
  const auto wq = linspace(4.41e9, 4.51e9, 7);
  const auto probe = linspace(4.40e9, 4.52e9, 13);
  const auto map = quantum::two_tone_map(hp, wq, probe, 2e6, 0.1);
  std::ostringstream out;
  io::write_two_tone_csv(map, out);
  std::istringstream in(out.str());
  const auto back = io::parse_two_tone_map(in, "inline");
  CHECK(back.omega_q == map.omega_q);
  CHECK(back.probe == map.probe);
  CHECK(back.amplitude == map.amplitude);

  std::istringstream partial("omega_q_hz,probe_hz,amplitude\n1,1,0.5\n1,2,0.5\n2,1,0.5\n");
  CHECK_THROWS_AS(io::parse_two_tone_map(partial, "partial"), ParseError);
}

TEST_CASE("experiment configuration") {
  const auto ref = io::reference_config();
  CHECK_NOTHROW(ref.validate());
  CHECK(ref.attenuation_db == 60.0);

  SUBCASE("round trip") {
    const auto j = io::config_to_json(ref);
    const auto back = io::config_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back == ref);
    CHECK(io::config_to_json(back).dump() == j.dump());
  }
  SUBCASE("key order") {
    std::vector<std::string> keys;
    const auto j = io::config_to_json(ref);
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"device", "transmon", "hybrid", "loss", "attenuation_db"});
  }
  SUBCASE("unknown keys") {
    auto j = nlohmann::json::parse(io::config_to_json(ref).dump());
    j["loss"]["colour"] = "blue";
    CHECK_THROWS_AS(io::config_from_json(j), ValidationError);
    std::vector<std::string> warnings;
    const auto c = io::config_from_json(j, io::ConfigMode::lenient, &warnings);
    CHECK(c == ref);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("loss.colour") != std::string::npos);
  }
  SUBCASE("missing field") {
    auto j = nlohmann::json::parse(io::config_to_json(ref).dump());
    j["transmon"].erase("ec");
    try {
      io::config_from_json(j, io::ConfigMode::lenient);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.fields() == std::vector<std::string>{"transmon.ec"});
      CHECK(std::string(e.what()).find("transmon.ec") != std::string::npos);
    }
  }
  SUBCASE("invalid values") {
    auto c = ref;
    c.attenuation_db = -3.0;
    c.loss.q_i = 0.0;
    try {
      c.validate();
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      const auto& f = e.fields();
      CHECK(std::find(f.begin(), f.end(), "attenuation_db") != f.end());
      CHECK(std::find(f.begin(), f.end(), "loss.q_i") != f.end());
    }
  }
  SUBCASE("file") {
    TempDir dir;
    const auto p = dir.write("c.json", io::config_to_json(ref).dump(2));
    CHECK(io::load_config(p) == ref);
    CHECK_THROWS_AS(io::load_config(dir.write("bad.json", "{ not json")), ParseError);
  }
}

TEST_CASE("power calibration") {
  SUBCASE("exact line") {
    const std::vector<double> p{1.0, 5.0, 10.0, 15.0, 25.0};
    std::vector<double> n;
    for (double v : p) n.push_back(0.2 * v);
    const auto c = io::calibrate_power(p, n);
    CHECK(c.slope == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(std::abs(c.intercept) < 1e-12);
    CHECK(c.fit.chi2 < 1e-28);
    CHECK_FALSE(c.anomalous_background);
  }
  SUBCASE("noisy data up to 25 uW") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> p, n, s;
    for (int i = 1; i <= 25; ++i) {
      p.push_back(i);
      const double sigma = 0.05 + 0.02 * 0.32 * i;
      s.push_back(sigma);
      n.push_back(0.32 * i + sigma * g(rng));
    }
    const auto c = io::calibrate_power(p, n, s);
    const double dof = static_cast<double>(p.size() - 2);
    // Reduced chi2 of a correct model has standard deviation sqrt(2/dof).
    CHECK(std::abs(c.fit.chi2 / dof - 1.0) < 3.0 * std::sqrt(2.0 / dof));
    CHECK(std::abs(c.slope - 0.32) < 3.0 * c.slope_sigma);
    CHECK_FALSE(c.anomalous_background);
  }
  SUBCASE("background offset is flagged") {
    const std::vector<double> p{1.0, 2.0, 3.0, 4.0, 5.0};
    const std::vector<double> n{1.21, 1.39, 1.61, 1.80, 2.01};
    const auto c = io::calibrate_power(p, n, std::vector<double>(5, 0.01));
    CHECK(c.anomalous_background);
  }
  SUBCASE("degenerate designs") {
    CHECK_THROWS_AS(io::calibrate_power({1.0, 1.0, 1.0}, {0.1, 0.2, 0.3}), UnderdeterminedError);
    CHECK_THROWS_AS(io::calibrate_power({1.0, 2.0}, {0.1, 0.2}), UnderdeterminedError);
  }
}

TEST_CASE("q versus power") {
  SUBCASE("five spectra at q = -0.25") {
    std::vector<std::pair<double, Spectrum>> in;
    for (int k = 0; k < 5; ++k) {
      const double n_max = 2.0 + 1.5 * k;
      in.emplace_back(5.0 * (k + 1), fano_spectrum({n_max, -0.25, 630e3, 4.4588e9, 0.1}, 0.01 * n_max, 50 + k));
    }
    const auto rows = io::q_vs_power_pipeline(in);
    REQUIRE(rows.size() == 5);
    for (const auto& r : rows) {
      CHECK(r.converged);
      CHECK(std::abs(r.fit.value("q") + 0.25) < 3.0 * r.fit.error("q"));
    }
  }
  SUBCASE("Lorentzian input") {
    const auto rows = io::q_vs_power_pipeline({{1.0, fano_spectrum({5.0, 0.0, 630e3, 4.4588e9, 0.1}, 0.05, 4)}});
    REQUIRE(rows.size() == 1);
    CHECK(std::abs(rows[0].fit.value("q")) < 3.0 * rows[0].fit.error("q"));
  }
  SUBCASE("coupled-oscillator spectra") {
    lineshape::OscillatorPairParams p;
    p.omega_1 = 4.4588e9;
    p.omega_2 = 4.504e9;
    p.gamma_2 = lineshape::sinc2_main_lobe_fwhm(16, 4.504e9);
    p.gamma_1 = p.gamma_2 / 3000.0;
    p.kappa = 2.0 * 9.76e6 * p.omega_1;
    const auto grid = linspace(4.4388e9, 4.4788e9, 2001);
    const auto resp = lineshape::coupled_oscillator_response(grid, p);
    const auto y = lineshape::continuum_normalized_power(resp, p);
    analysis::FanoFitOptions o;
    o.extremum_guess = true;
    o.non_negative = false;
    const auto rows = io::q_vs_power_pipeline({{1.0, make_spectrum(grid, y, Unit::hertz, Unit::dimensionless, "osc")}}, o);
    REQUIRE(rows[0].converged);
    const double q = lineshape::fold_fano_branch(analysis::fano_params(rows[0].fit)).q;
    CHECK(q == doctest::Approx(-0.36).epsilon(0.10));
  }
  SUBCASE("failed rows do not stop the batch") {
    std::vector<std::pair<double, Spectrum>> in;
    in.emplace_back(1.0, fano_spectrum({5.0, -0.25, 630e3, 4.4588e9, 0.1}, 0.0, 0));
    in.emplace_back(2.0, make_spectrum({1.0, 2.0, 3.0}, {0.0, 1.0, 0.0}, Unit::hertz, Unit::dimensionless, "tiny"));
    in.emplace_back(3.0, fano_spectrum({7.0, -0.25, 630e3, 4.4588e9, 0.1}, 0.0, 0));
    const auto rows = io::q_vs_power_pipeline(in);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].converged);
    CHECK_FALSE(rows[1].converged);
    CHECK_FALSE(rows[1].error.empty());
    CHECK(rows[2].converged);
    std::ostringstream out;
    io::write_q_vs_power_csv(rows, out);
    std::istringstream lines(out.str());
    std::string header, r0, r1;
    std::getline(lines, header);
    std::getline(lines, r0);
    std::getline(lines, r1);
    CHECK(header ==
          "power,n_max,n_max_sigma,q,q_sigma,gamma,gamma_sigma,omega_m,omega_m_sigma,n_off,n_off_sigma,converged");
    CHECK(r1.find("nan") != std::string::npos);
  }
  SUBCASE("deterministic output") {
    std::vector<std::pair<double, Spectrum>> in;
    for (int k = 0; k < 3; ++k) in.emplace_back(k + 1.0, fano_spectrum({4.0 + k, -0.25, 630e3, 4.4588e9, 0.1}, 0.04, 8 + k));
    std::ostringstream a, b;
    io::write_q_vs_power_csv(io::q_vs_power_pipeline(in), a);
    io::write_q_vs_power_csv(io::q_vs_power_pipeline(in), b);
    CHECK(a.str() == b.str());
  }
}
