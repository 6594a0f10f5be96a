#pragma once

#include <stdexcept>
#include <string>

namespace osssl {

/// Broad error family; the CLI maps each family onto its exit code.
enum class ErrorKind { config, data, runtime };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define OSSSL_DECLARE_ERROR(Name, Kind)                                           \
  class Name : public Error {                                                    \
   public:                                                                       \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, #Name ": " + what) {} \
  }

// numerics
OSSSL_DECLARE_ERROR(ZeroVector, runtime);
OSSSL_DECLARE_ERROR(DimensionMismatch, runtime);

// data
OSSSL_DECLARE_ERROR(InfeasibleSpec, data);
OSSSL_DECLARE_ERROR(ParseError, data);
OSSSL_DECLARE_ERROR(SchemaError, data);
OSSSL_DECLARE_ERROR(InvariantViolation, data);

// prototypes / identification
OSSSL_DECLARE_ERROR(TooFewPoints, runtime);
OSSSL_DECLARE_ERROR(NotEnoughWarmupSamples, runtime);
OSSSL_DECLARE_ERROR(BankNotInitialized, runtime);
OSSSL_DECLARE_ERROR(BankAlreadyInitialized, runtime);
OSSSL_DECLARE_ERROR(BankNotFlagged, runtime);
OSSSL_DECLARE_ERROR(EmptyClass, runtime);
OSSSL_DECLARE_ERROR(InvalidNid, config);

// pools
OSSSL_DECLARE_ERROR(LevelOutOfRange, runtime);
OSSSL_DECLARE_ERROR(EmptyPyramidLevel, runtime);

// metrics
OSSSL_DECLARE_ERROR(EmptyTestSet, data);
OSSSL_DECLARE_ERROR(SingleClassInput, runtime);

// harness
OSSSL_DECLARE_ERROR(ConfigError, config);
OSSSL_DECLARE_ERROR(CorruptCheckpoint, data);
OSSSL_DECLARE_ERROR(VersionMismatch, data);

#undef OSSSL_DECLARE_ERROR

}  // namespace osssl
