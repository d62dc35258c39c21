#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace qafano {

// Axis units carried by every Spectrum. Conversions are never implicit.
enum class Unit {
  hertz,
  watt,
  microwatt,
  per_second,
  dimensionless,
};

// CSV token for a unit, e.g. "hz" in a `x_hz` header.
std::string_view unit_token(Unit u);
Unit unit_from_token(std::string_view token);

// Ordered (x, y) samples. Invariants: equal lengths, x strictly increasing,
// every value finite. `validate()` checks them; the factory calls it.
struct Spectrum {
  std::vector<double> x;
  std::vector<double> y;
  Unit x_unit = Unit::hertz;
  Unit y_unit = Unit::dimensionless;
  std::string provenance;

  std::size_t size() const { return x.size(); }
  bool empty() const { return x.empty(); }
  void validate() const;
};

Spectrum make_spectrum(std::vector<double> x, std::vector<double> y, Unit x_unit,
                       Unit y_unit, std::string provenance);

// Writes `x_<unit>,y_<unit>` CSV with 17 significant digits (bit-exact reload).
void write_spectrum_csv(const Spectrum& s, std::ostream& out);

// Same rows with caller-chosen column names, for the per-module CSV contracts
// (`freq_hz,g_norm`, `n,shift_hz`, `freq_hz,amplitude`).
void write_two_column_csv(std::ostream& out, std::string_view x_name, std::string_view y_name,
                          const std::vector<double>& x, const std::vector<double>& y);

// Shortest round-trippable decimal form of a double (17 significant digits).
std::string format_double(double v);

// Evenly spaced grid, both ends included.
std::vector<double> linspace(double lo, double hi, std::size_t n);

}  // namespace qafano
