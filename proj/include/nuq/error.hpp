#pragma once

#include <stdexcept>
#include <string>

namespace nuq {

// Base for every error raised by the library. The CLI maps all of these to
// exit code 2.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class UnsupportedDatatypeError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class ConsistencyError : public Error { using Error::Error; };
// Violated precondition of an operation (dimension mismatch, bad argument).
class ContractError : public Error { using Error::Error; };
class RankDeficiencyError : public Error { using Error::Error; };
class DegenerateVoxelError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };

class ValidationError : public Error {
public:
  explicit ValidationError(const std::string &report)
      : Error("dataset validation failed:\n" + report) {}
};

} // namespace nuq
