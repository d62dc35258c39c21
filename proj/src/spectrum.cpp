#include "qafano/spectrum.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "qafano/error.hpp"

namespace qafano {

namespace {

struct UnitName {
  Unit unit;
  std::string_view token;
};

constexpr UnitName kUnitNames[] = {
    {Unit::hertz, "hz"},
    {Unit::watt, "w"},
    {Unit::microwatt, "uw"},
    {Unit::per_second, "per_s"},
    {Unit::dimensionless, "dimensionless"},
};

}  // namespace

std::string_view unit_token(Unit u) {
  for (const auto& n : kUnitNames)
    if (n.unit == u) return n.token;
  throw Error("unknown unit");
}

Unit unit_from_token(std::string_view token) {
  for (const auto& n : kUnitNames)
    if (n.token == token) return n.unit;
  throw UnitMismatchError("unknown unit token '" + std::string(token) + "'");
}

void Spectrum::validate() const {
  if (x.size() != y.size())
    throw DomainError("spectrum: x and y lengths differ (" + std::to_string(x.size()) + " vs " +
                      std::to_string(y.size()) + ")");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw DomainError("spectrum: non-finite value at index " + std::to_string(i));
    if (i > 0 && !(x[i] > x[i - 1]))
      throw DomainError("spectrum: x not strictly increasing at index " + std::to_string(i));
  }
}

Spectrum make_spectrum(std::vector<double> x, std::vector<double> y, Unit x_unit, Unit y_unit,
                       std::string provenance) {
  Spectrum s{std::move(x), std::move(y), x_unit, y_unit, std::move(provenance)};
  s.validate();
  return s;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_two_column_csv(std::ostream& out, std::string_view x_name, std::string_view y_name,
                          const std::vector<double>& x, const std::vector<double>& y) {
  out << x_name << ',' << y_name << '\n';
  for (std::size_t i = 0; i < x.size(); ++i)
    out << format_double(x[i]) << ',' << format_double(y[i]) << '\n';
}

void write_spectrum_csv(const Spectrum& s, std::ostream& out) {
  const std::string xn = "x_" + std::string(unit_token(s.x_unit));
  const std::string yn = "y_" + std::string(unit_token(s.y_unit));
  write_two_column_csv(out, xn, yn, s.x, s.y);
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = lo;
    return v;
  }
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + step * static_cast<double>(i);
  if (n > 1) v.back() = hi;
  return v;
}

}  // namespace qafano
