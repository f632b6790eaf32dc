#pragma once

#include <stdexcept>
#include <string>

namespace topkast {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
/// A gradient record touched a coordinate outside the backward set.
class ContractError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class TruncationError : public Error { using Error::Error; };
class VersionError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

}  // namespace topkast
