#ifndef SELFTUNE_ERRORS_HPP
#define SELFTUNE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace selftune {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform.
struct ShapeError : Error {
  using Error::Error;
};

// A computation produced a non-finite value.
struct NumericalError : Error {
  using Error::Error;
};

// An object was used outside its valid lifecycle (e.g. a tape replayed twice).
struct StateError : Error {
  using Error::Error;
};

// An environment action index is out of range.
struct ActionError : Error {
  using Error::Error;
};

// A probability vector is not a valid distribution.
struct DistributionError : Error {
  using Error::Error;
};

// A request conflicts with the configured architecture or experiment setup.
struct ConfigError : Error {
  using Error::Error;
};

// A batch is too degenerate for the requested statistic (e.g. zero spread).
struct DegenerateBatchError : Error {
  using Error::Error;
};

// A metrics/aggregate file is missing a required column.
struct SchemaError : Error {
  using Error::Error;
};

}  // namespace selftune

#endif
