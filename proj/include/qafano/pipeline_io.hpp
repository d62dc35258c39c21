#pragma once

// Spectrum CSV loading, experiment configuration, power calibration and the
// q-versus-power batch analysis.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qafano/analysis.hpp"
#include "qafano/fitting.hpp"
#include "qafano/lineshapes.hpp"
#include "qafano/quantum.hpp"
#include "qafano/saw_com.hpp"
#include "qafano/spectrum.hpp"

namespace qafano::io {

// Units the caller requires; an empty slot accepts whatever the header says.
struct ExpectedUnits {
  std::optional<Unit> x;
  std::optional<Unit> y;
};

// Reads a two-column CSV. The header is `x_<unit>,y_<unit>` or one of the
// named columns freq_hz, g_norm, amplitude, n, shift_hz. Shuffled rows are
// sorted and the provenance gains a "resorted" note.
Spectrum load_spectrum(const std::filesystem::path& path, const ExpectedUnits& expected = {});
Spectrum parse_spectrum(std::istream& in, const ExpectedUnits& expected, const std::string& source);

// Writes `contents` next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void save_spectrum(const std::filesystem::path& path, const Spectrum& s);

// Long-format map CSV `omega_q_hz,probe_hz,amplitude`, one row per pixel,
// qubit frequency outermost.
void write_two_tone_csv(const quantum::TwoToneMap& map, std::ostream& out);
quantum::TwoToneMap load_two_tone_map(const std::filesystem::path& path);
quantum::TwoToneMap parse_two_tone_map(std::istream& in, const std::string& source);

struct ExperimentConfig {
  com::DeviceParams device;
  quantum::TransmonParams transmon;
  quantum::HybridParams hybrid;
  lineshape::LossParams loss;
  double attenuation_db = 0.0;

  // Throws ValidationError listing every offending field.
  void validate() const;
};

ExperimentConfig reference_config();

enum class ConfigMode { strict, lenient };

// Unknown keys throw in strict mode and are appended to `warnings` in
// lenient mode. Missing keys always throw, naming the dotted field path.
ExperimentConfig config_from_json(const nlohmann::json& j, ConfigMode mode = ConfigMode::strict,
                                  std::vector<std::string>* warnings = nullptr);
nlohmann::ordered_json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path, ConfigMode mode = ConfigMode::strict,
                             std::vector<std::string>* warnings = nullptr);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

struct PowerCalibration {
  fit::FitResult fit;
  double slope = 0.0;
  double slope_sigma = 0.0;
  double intercept = 0.0;
  double intercept_sigma = 0.0;
  // |intercept| exceeds twice its uncertainty.
  bool anomalous_background = false;
};

// Weighted line n_bar = slope * P + intercept.
PowerCalibration calibrate_power(const std::vector<double>& powers, const std::vector<double>& n_bars,
                                 const std::vector<double>& sigma = {});

struct QPowerRow {
  double power = 0.0;
  fit::FitResult fit;
  bool converged = false;
  std::string error;  // non-empty when the fit threw
};

// Fits the Fano lineshape to each (power, spectrum) pair in order. A failed
// fit flags its row and the batch continues.
std::vector<QPowerRow> q_vs_power_pipeline(const std::vector<std::pair<double, Spectrum>>& spectra,
                                           const analysis::FanoFitOptions& opts = {});

// Header `power,n_max,n_max_sigma,q,q_sigma,...,converged`.
void write_q_vs_power_csv(const std::vector<QPowerRow>& rows, std::ostream& out);

}  // namespace qafano::io
