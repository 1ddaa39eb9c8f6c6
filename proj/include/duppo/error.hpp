#pragma once

#include <stdexcept>
#include <string>

namespace duppo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownTokenError : public Error {
 public:
  explicit UnknownTokenError(const std::string& token)
      : Error("unknown token: \"" + token + "\""), token_(token) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

class GroupTooSmallError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss, objective or gradient.
class DivergenceError : public Error {
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

class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace duppo
