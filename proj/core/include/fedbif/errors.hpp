#pragma once

#include <stdexcept>
#include <string>

namespace fedbif {

/// Error categories, each mapped to a stable CLI exit code.
enum class ErrorCategory {
  config = 2,      // malformed or inconsistent run configuration
  spec = 3,        // invalid model/schedule specification
  dimension = 4,   // tensor shape mismatch
  data = 5,        // bad input values (non-finite, out-of-range labels, ...)
  range = 6,       // integer outside its declared bit-width range
  protocol = 7,    // inconsistent round state between server and clients
  decode = 8,      // corrupt or truncated wire payload
  accounting = 9,  // invalid communication-statistics query
  partition = 10,  // infeasible data partition
  io = 11,         // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const { return category_; }
  int exit_code() const { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};
struct SpecError : Error {
  explicit SpecError(const std::string& w) : Error(ErrorCategory::spec, w) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorCategory::dimension, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorCategory::data, w) {}
};
struct RangeError : Error {
  explicit RangeError(const std::string& w) : Error(ErrorCategory::range, w) {}
};
struct ProtocolError : Error {
  explicit ProtocolError(const std::string& w) : Error(ErrorCategory::protocol, w) {}
};
struct DecodeError : Error {
  explicit DecodeError(const std::string& w) : Error(ErrorCategory::decode, w) {}
};
struct AccountingError : Error {
  explicit AccountingError(const std::string& w) : Error(ErrorCategory::accounting, w) {}
};
struct PartitionError : Error {
  explicit PartitionError(const std::string& w) : Error(ErrorCategory::partition, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::io, w) {}
};

}  // namespace fedbif
