#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "cli.hpp"
#include "qafano/pipeline_io.hpp"

using namespace qafano;
namespace fs = std::filesystem;

namespace {

struct Sandbox {
  fs::path root;
  std::string out, err;

  Sandbox() {
    static int counter = 0;
    root = fs::temp_directory_path() / ("qafano_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(root);
  }
  ~Sandbox() { fs::remove_all(root); }

  int run(const std::string& dir, std::vector<std::string> args) {
    args.insert(args.begin(), {"qafano-cli", "--out-dir", (root / dir).string()});
    std::ostringstream o, e;
    const int rc = cli::run(args, o, e);
    out = o.str();
    err = e.str();
    return rc;
  }

  nlohmann::json json(const std::string& rel) const {
    std::ifstream in(root / rel);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
  }

  std::string text(const std::string& rel) const {
    std::ifstream in(root / rel, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string write(const std::string& rel, const std::string& body) const {
    std::ofstream(root / rel) << body;
    return (root / rel).string();
  }
};

}  // namespace

TEST_CASE("design") {
  Sandbox sb;
  REQUIRE(sb.run("a", {"design"}) == 0);
  const auto j = sb.json("a/design.json");
  CHECK(j["penetration_depth_m"].get<double>() == doctest::Approx(81.6e-6).epsilon(1e-3));
  CHECK(j["effective_length_m"].get<double>() == doctest::Approx(175.2e-6).epsilon(1e-3));
  CHECK(j["free_spectral_range_hz"].get<double>() == doctest::Approx(10.38e6).epsilon(1e-3));
  CHECK(j["stopband_width_hz"].get<double>() == doctest::Approx(14.19e6).epsilon(1e-3));
  CHECK(sb.out.find("L_P") != std::string::npos);

  SUBCASE("doubled mirror reflectivity") {
    const double r = std::abs(io::reference_config().device.r_mirror);
    REQUIRE(sb.run("b", {"design", "--r-mirror", std::to_string(2.0 * r)}) == 0);
    const auto k = sb.json("b/design.json");
    CHECK(k["penetration_depth_m"].get<double>() ==
          doctest::Approx(0.5 * j["penetration_depth_m"].get<double>()).epsilon(1e-12));
    CHECK(k["stopband_width_hz"].get<double>() ==
          doctest::Approx(2.0 * j["stopband_width_hz"].get<double>()).epsilon(1e-12));
  }
  SUBCASE("config file with a missing field") {
    auto cfg = nlohmann::json::parse(io::config_to_json(io::reference_config()).dump());
    cfg["device"].erase("v_sound");
    const auto path = sb.write("bad.json", cfg.dump());
    CHECK(sb.run("c", {"design", "--config", path}) == 1);
    CHECK(sb.err.find("device.v_sound") != std::string::npos);
  }
  SUBCASE("invalid override") {
    CHECK(sb.run("c", {"design", "--l-mirror", "-1"}) == 1);
    CHECK(sb.err.find("device.l_mirror") != std::string::npos);
  }
}

TEST_CASE("com-sim and stark outputs") {
  Sandbox sb;
  REQUIRE(sb.run("c", {"com-sim", "--span", "resonance", "--points", "2001"}) == 0);
  const auto csv = sb.text("c/conductance.csv");
  CHECK(csv.rfind("freq_hz,g_norm\n", 0) == 0);
  const auto summary = sb.json("c/com_summary.json");
  CHECK(summary["composite"]["peak_hz"].get<double>() == doctest::Approx(4.4583e9).epsilon(1e-4));

  REQUIRE(sb.run("s", {"stark", "--n-max", "4"}) == 0);
  const auto st = sb.json("s/stark_summary.json");
  CHECK(st["dispersive_shift_hz"].get<double>() == doctest::Approx(-0.966e6).epsilon(1e-3));
  CHECK(std::abs(st["relative_deviation"].get<double>()) < 0.03);
  CHECK(sb.text("s/stark.csv").rfind("n,shift_hz\n0,0\n", 0) == 0);

  CHECK(sb.run("x", {"stark", "--delta", "328e6"}) == 3);
}

TEST_CASE("fit round trips") {
  Sandbox sb;
  SUBCASE("fano") {
    REQUIRE(sb.run("s", {"synth", "--model", "fano", "--q", "-0.25", "--noise", "0.08", "--seed", "4"}) == 0);
    const auto data = (sb.root / "s/fano.csv").string();
    REQUIRE(sb.run("f", {"fit", "--model", "fano", "--data", data}) == 0);
    const auto j = sb.json("f/fit_fano.json");
    CHECK(j["converged"].get<bool>());
    CHECK(std::abs(j["params"]["q"].get<double>() + 0.25) < 3.0 * j["sigma"]["q"].get<double>());

    CHECK(sb.run("g", {"fit", "--model", "fano", "--data", data, "--max-iter", "1"}) == 2);
    CHECK(fs::exists(sb.root / "g/fit_fano.json"));
    CHECK(fs::exists(sb.root / "g/manifest.json"));
  }
  SUBCASE("loss") {
    REQUIRE(sb.run("s", {"synth", "--model", "loss"}) == 0);
    REQUIRE(sb.run("f", {"fit", "--model", "loss", "--data", (sb.root / "s/loss.csv").string(), "--init-q-i", "7000",
                         "--init-gamma-0", "1.5e8"}) == 0);
    const auto j = sb.json("f/fit_loss.json");
    CHECK(j["params"]["q_i"].get<double>() == doctest::Approx(1.05e4).epsilon(0.02));
    CHECK(j["params"]["gamma_0"].get<double>() == doctest::Approx(0.252e9).epsilon(0.02));
  }
  SUBCASE("coherent") {
    REQUIRE(sb.run("s", {"coherent-sim", "--n-bar", "0"}) == 0);
    const auto two_chi = std::to_string(quantum::dispersive_shift(9.76e6, -138.6e6, 328e6));
    REQUIRE(sb.run("f", {"fit", "--model", "coherent", "--data", (sb.root / "s/coherent.csv").string(),
                         "--two-chi", two_chi}) == 0);
    CHECK(sb.json("f/fit_coherent.json")["params"]["n_bar"].get<double>() < 0.05);
  }
  SUBCASE("bad input") {
    const auto path = sb.write("broken.csv", "x_hz,y_dimensionless\n1,2\n2,oops\n");
    CHECK(sb.run("f", {"fit", "--model", "fano", "--data", path}) == 1);
    CHECK(sb.err.find("line 3") != std::string::npos);
  }
}

TEST_CASE("predict-q and oscillators") {
  Sandbox sb;
  REQUIRE(sb.run("p", {"predict-q", "--gamma-idt", "249.7e6"}) == 0);
  CHECK(sb.json("p/predict_q.json")["q_predicted"].get<double>() == doctest::Approx(-0.364).epsilon(2e-3));
  REQUIRE(sb.run("z", {"predict-q", "--omega-saw", "4.504e9"}) == 0);
  CHECK(sb.json("z/predict_q.json")["q_predicted"].get<double>() == 0.0);
  // Mode placed so that omega - omega_idt^2 / omega flips sign.
  const double wi = 4.504e9, ws = 4.4588e9;
  const double c = (wi * wi - ws * ws) / ws;
  const double mirrored = 0.5 * (c + std::sqrt(c * c + 4.0 * wi * wi));
  std::ostringstream flag;
  flag.precision(17);
  flag << mirrored;
  REQUIRE(sb.run("m", {"predict-q", "--omega-saw", flag.str(), "--gamma-idt", "249.7e6"}) == 0);
  CHECK(sb.json("m/predict_q.json")["q_predicted"].get<double>() == doctest::Approx(0.364).epsilon(2e-3));

  REQUIRE(sb.run("o", {"oscillators"}) == 0);
  const auto j = sb.json("o/oscillator_fit.json");
  CHECK(j["converged"].get<bool>());
  CHECK(std::abs(j["relative_deviation"].get<double>()) < 0.10);
  CHECK(sb.text("o/oscillators.csv").rfind("x_hz,y_dimensionless\n", 0) == 0);
}

TEST_CASE("reproducible runs and manifests") {
  Sandbox sb;
  REQUIRE(sb.run("a", {"synth", "--model", "fano", "--noise", "0.05", "--seed", "9"}) == 0);
  REQUIRE(sb.run("b", {"synth", "--model", "fano", "--noise", "0.05", "--seed", "9"}) == 0);
  CHECK(sb.text("a/fano.csv") == sb.text("b/fano.csv"));
  REQUIRE(sb.run("c", {"crossing-sim", "--fit"}) == 0);
  REQUIRE(sb.run("d", {"crossing-sim", "--fit"}) == 0);
  for (const auto* f : {"branches.csv", "crossing_map.csv", "crossing_fit.json"})
    CHECK(sb.text(std::string("c/") + f) == sb.text(std::string("d/") + f));
  CHECK(sb.json("c/crossing_fit.json")["params"]["g_m"].get<double>() == doctest::Approx(9.76e6).epsilon(0.05));

  const auto m = sb.json("c/manifest.json");
  std::vector<std::string> keys;
  for (const auto& [k, v] : m.items()) keys.push_back(k);
  for (const auto* k : {"command_line", "config_hash", "toolkit_version", "timestamp", "outputs"})
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
  CHECK(m["toolkit_version"] == cli::kVersion);
  CHECK(m["command_line"].get<std::string>().find("crossing-sim --fit") != std::string::npos);
  CHECK(m["outputs"].size() == 3);
  CHECK(m["config_hash"] == sb.json("d/manifest.json")["config_hash"]);

  REQUIRE(sb.run("e", {"crossing-sim", "--g-m", "9e6"}) == 0);
  CHECK(sb.json("e/manifest.json")["config_hash"] != m["config_hash"]);
  CHECK(cli::fnv1a_hex("") == "cbf29ce484222325");
  CHECK(cli::fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("help and flag errors") {
  Sandbox sb;
  const std::map<std::string, std::vector<std::string>> flags = {
      {"design", {"--config", "--lenient-config", "--r-mirror", "--v-sound"}},
      {"com-sim", {"--span", "--f-min", "--f-max", "--points", "--idt-only", "--with-idt", "--subsections"}},
      {"stark", {"--n-max", "--omega-q", "--n-fock", "--g-m", "--delta", "--alpha"}},
      {"crossing-sim", {"--q-min", "--q-max", "--q-points", "--probe-points", "--linewidth", "--visibility", "--fit"}},
      {"coherent-sim", {"--n-bar", "--gamma-q", "--omega-q0", "--two-chi", "--points", "--noise", "--seed"}},
      {"fit", {"--model", "--data", "--two-chi", "--allow-dip", "--max-iter", "--init-q"}},
      {"predict-q", {"--omega-saw", "--omega-idt-center", "--gamma-idt"}},
      {"oscillators", {"--omega-1", "--omega-2", "--gamma-1", "--gamma-2", "--gamma-ratio", "--coupling", "--drive"}},
      {"pipeline-q-vs-power", {"--index", "--allow-dip"}},
      {"calibrate-power", {"--data"}},
      {"synth", {"--model", "--q", "--gamma", "--noise", "--rel-noise", "--seed"}},
  };
  for (const auto& [cmd, list] : flags) {
    CAPTURE(cmd);
    CHECK(sb.run("h", {cmd, "--help"}) == 0);
    for (const auto& f : list) {
      CAPTURE(f);
      CHECK(sb.out.find(f) != std::string::npos);
    }
    CHECK(sb.run("u", {cmd, "--definitely-not-a-flag"}) == 1);
  }
  CHECK(sb.run("u", {}) == 1);
  CHECK(sb.run("u", {"frobnicate"}) == 1);
}

TEST_CASE("batch commands") {
  Sandbox sb;
  std::string index = "power_w,path\n";
  for (int k = 0; k < 3; ++k) {
    const std::string dir = "s" + std::to_string(k);
    REQUIRE(sb.run(dir, {"synth", "--model", "fano", "--n-max", std::to_string(3 + 2 * k), "--noise", "0.03",
                         "--seed", std::to_string(k)}) == 0);
    index += std::to_string(1e-6 * (k + 1)) + "," + (sb.root / dir / "fano.csv").string() + "\n";
  }
  const auto idx = sb.write("index.csv", index);
  REQUIRE(sb.run("p", {"pipeline-q-vs-power", "--index", idx}) == 0);
  REQUIRE(sb.run("r", {"pipeline-q-vs-power", "--index", idx}) == 0);
  CHECK(sb.text("p/q_vs_power.csv") == sb.text("r/q_vs_power.csv"));
  CHECK(sb.text("p/q_vs_power.csv").rfind("power,n_max,n_max_sigma,q,q_sigma,", 0) == 0);

  const auto cal = sb.write("cal.csv", "x_uw,y_dimensionless\n1,0.2\n5,1\n10,2\n20,4\n");
  REQUIRE(sb.run("c", {"calibrate-power", "--data", cal}) == 0);
  CHECK(sb.json("c/calibration.json")["slope"].get<double>() == doctest::Approx(0.2).epsilon(1e-10));
}
