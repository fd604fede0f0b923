#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tip {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// Transport failure after the retry budget was spent.
class EndpointError : public Error {
 public:
  using Error::Error;
};

// Wire response that does not have the expected shape.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Backend cannot serve the requested capability (e.g. log-probabilities).
class UnsupportedCapability : public Error {
 public:
  using Error::Error;
};

// Raised inside a transport when a retry may succeed.
class TransientError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Attacker output that could not be turned into a payload. The span points at
// the offending region of the raw completion.
class PayloadParseError : public Error {
 public:
  PayloadParseError(const std::string& what, std::size_t span_begin,
                    std::size_t span_end)
      : Error(what), span_begin_(span_begin), span_end_(span_end) {}

  std::size_t span_begin() const { return span_begin_; }
  std::size_t span_end() const { return span_end_; }

 private:
  std::size_t span_begin_;
  std::size_t span_end_;
};

}  // namespace tip
