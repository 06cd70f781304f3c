#pragma once

#include <stdexcept>
#include <string>

namespace patchgeo {

// Every failure the library reports derives from Error so callers can
// catch at one level and still distinguish categories when they care.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (probabilities, hyperparameters, band widths...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CoverageError : public Error {
 public:
  using Error::Error;
};

class LossError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class ResolutionError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace patchgeo
