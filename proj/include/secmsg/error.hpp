#pragma once

#include <stdexcept>
#include <string>

namespace secmsg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad key, unknown backend, or a backend refusing its configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Authentication tag mismatch: the frame was modified or the key is wrong.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Socket-level failure or peer disconnect.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Failure to bring up the process group (bind conflict, unreachable peer).
class StartupError : public TransportError {
 public:
  using TransportError::TransportError;
};

/// Peers disagree about message layout, or the API was misused.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Model fitting could not produce parameters from the given data.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (CSV, JSON, roster contents).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace secmsg
