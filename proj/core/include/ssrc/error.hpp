#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ssrc {

// Base of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// log/div/sqrt outside the operand domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated a precondition (non-scalar loss, K = 0, tau <= 0, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// A loss term evaluated to NaN/Inf. `step` is -1 outside a training loop.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(std::string term, std::int64_t step)
      : Error("non-finite loss term '" + term + "'" +
              (step >= 0 ? " at step " + std::to_string(step) : std::string())),
        term_(std::move(term)),
        step_(step) {}

  const std::string& term() const noexcept { return term_; }
  std::int64_t step() const noexcept { return step_; }

 private:
  std::string term_;
  std::int64_t step_;
};

}  // namespace ssrc
