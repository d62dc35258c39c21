#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qafano {

// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside the domain where a formula is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Exact resonance or a zero divisor in a closed-form expression.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Frequency grid too coarse to resolve a resonance.
class RefinementError : public Error {
 public:
  using Error::Error;
};

// Peak analysis found zero or several candidate peaks.
class AmbiguityError : public Error {
 public:
  using Error::Error;
};

// Dressed-state labeling by bare-state overlap failed.
class BranchError : public Error {
 public:
  using Error::Error;
};

// Requested Hilbert space is too large.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Data does not determine the requested parameters.
class UnderdeterminedError : public Error {
 public:
  using Error::Error;
};

// Ridge extraction from a two-tone map failed.
class ExtractionError : public Error {
 public:
  using Error::Error;
};

// Normal equations are singular; `direction` spans the (numerical) null space.
class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& what, std::vector<double> direction)
      : Error(what), direction_(std::move(direction)) {}
  const std::vector<double>& direction() const noexcept { return direction_; }

 private:
  std::vector<double> direction_;
};

// Model returned NaN or infinity while perturbing one parameter.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, int parameter_index)
      : Error(what), parameter_index_(parameter_index) {}
  int parameter_index() const noexcept { return parameter_index_; }

 private:
  int parameter_index_;
};

// Malformed input file; `line` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line) : Error(what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class UnitMismatchError : public Error {
 public:
  using Error::Error;
};

// Configuration failed validation; `fields` names every offending entry.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::vector<std::string> fields)
      : Error(what), fields_(std::move(fields)) {}
  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  std::vector<std::string> fields_;
};

}  // namespace qafano
