#pragma once

#include <stdexcept>
#include <string>

namespace lorascape {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// An iterative kernel (SVD, eigen-solver) failed to converge.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int iterations)
      : Error(what), iterations_(iterations) {}
  int iterations() const { return iterations_; }

 private:
  int iterations_;
};

/// A matrix has larger rank than the factor width allows.
class RankOverflow : public Error {
 public:
  using Error::Error;
};

/// A trajectory does not reach back far enough for the requested window.
class InsufficientHistory : public Error {
 public:
  using Error::Error;
};

/// Landscape theory preconditions (alpha > 0, beta finite) do not hold.
class InapplicableTheory : public Error {
 public:
  using Error::Error;
};

/// Monte-Carlo estimation produced no usable sample.
class EstimationError : public Error {
 public:
  using Error::Error;
};

}  // namespace lorascape
