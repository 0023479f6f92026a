#pragma once

#include <stdexcept>
#include <string>

namespace defgen {

/// Base class for all library errors. CLI maps these to exit code 2
/// (input/config errors) or 1 (check failures).
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// numerics
struct ShapeMismatch : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };
struct TapeReused : Error { using Error::Error; };
struct NonScalarLoss : Error { using Error::Error; };
struct ZeroNorm : Error { using Error::Error; };
struct AllMasked : Error { using Error::Error; };

// data
struct MalformedRecord : Error { using Error::Error; };
struct TargetNotFound : Error { using Error::Error; };
struct EmptyCorpus : Error { using Error::Error; };

// model
struct SequenceTooLong : Error { using Error::Error; };
struct EmptyTarget : Error { using Error::Error; };

// objectives
struct AllPadded : Error { using Error::Error; };
struct LambdaOutOfRange : Error { using Error::Error; };

// training
struct NonFiniteGradient : Error { using Error::Error; };
struct DivergedLoss : Error { using Error::Error; };
struct ConfigMismatch : Error { using Error::Error; };
struct CorruptCheckpoint : Error { using Error::Error; };

// decode-eval
struct EmptyHypothesisSet : Error { using Error::Error; };

// io
struct IoError : Error { using Error::Error; };

}  // namespace defgen
