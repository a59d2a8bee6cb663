#pragma once

#include <stdexcept>
#include <string>

namespace papred {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A measurement violates its own invariants (e.g. finish before arrival).
class InvalidMeasurement : public Error {
 public:
  using Error::Error;
};

/// Call made in the wrong lifecycle state (monitor phase calls).
class StateError : public Error {
 public:
  using Error::Error;
};

class UnsupportedTopology : public Error {
 public:
  using Error::Error;
};

/// Timeouts, unreachable peers, closed connections.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Malformed bytes on the wire.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Library bug: e.g. a derived schedule failed validation.
class InternalError : public Error {
 public:
  using Error::Error;
};

class DeadlockError : public Error {
 public:
  using Error::Error;
};

}  // namespace papred
