#pragma once

#include <stdexcept>
#include <string>

namespace mjlq {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// I/O and validation.
class IoError : public Error {
 public:
  using Error::Error;
};
class ParseError : public Error {
 public:
  using Error::Error;
};
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Linear-algebra level failures.
class SingularOperator : public Error {
 public:
  using Error::Error;
};
class EigenFailure : public Error {
 public:
  using Error::Error;
};
class InternalError : public Error {
 public:
  using Error::Error;
};

// Riccati solver failures.
class NBreakdown : public Error {
 public:
  using Error::Error;
};
class Blowup : public Error {
 public:
  using Error::Error;
};
class NotStabilizable : public Error {
 public:
  using Error::Error;
};
class NotStabilizingSolution : public Error {
 public:
  using Error::Error;
};
class HomotopyDiverged : public Error {
 public:
  using Error::Error;
};

// Strategy assembly failures.
class SingularN : public Error {
 public:
  using Error::Error;
};
class SingularSystem : public Error {
 public:
  using Error::Error;
};
class UnsupportedInhomogeneous : public Error {
 public:
  using Error::Error;
};

}  // namespace mjlq
