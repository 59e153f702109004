#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace contok {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or sizes that do not fit an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument outside its mathematical domain (t outside [0,1], empty reduction, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

/// A sampler or generation loop produced a non-finite value.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Training hit a non-finite loss.
class NumericAbort : public Error {
 public:
  NumericAbort(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A network produced non-finite output; its parameters are no longer healthy.
class ParameterHealthError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace contok
