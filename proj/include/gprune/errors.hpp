#pragma once

#include <stdexcept>
#include <string>

namespace gprune {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// IR document / construction failures
struct SchemaError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct CycleError : Error { using Error::Error; };
struct PolicyError : Error { using Error::Error; };
struct StrategyError : Error { using Error::Error; };

// graph lowering
struct LowerError : Error { using Error::Error; };

// numerics
struct DimError : Error { using Error::Error; };
struct NotScalarError : Error { using Error::Error; };

// encoder / agent
struct MissingParamsError : Error { using Error::Error; };
struct SlotMismatchError : Error { using Error::Error; };
struct InsufficientBufferError : Error { using Error::Error; };

// oracle
struct OracleError : Error { using Error::Error; };
struct DivergenceError : OracleError { using OracleError::OracleError; };
struct EmptySplitError : OracleError { using OracleError::OracleError; };

// I/O
struct IoError : Error { using Error::Error; };

}  // namespace gprune
