#pragma once

#include <stdexcept>
#include <string>

namespace did3 {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer geometry violations; messages name the offending shapes.
struct ShapeError : Error { using Error::Error; };

// Malformed weight or config files; messages carry the byte offset or line.
struct FormatError : Error { using Error::Error; };

// Evaluation protocol preconditions (empty gallery, one-class fold, ...).
struct ProtocolError : Error { using Error::Error; };

// Dataset cannot support the requested sampling.
struct DataError : Error { using Error::Error; };

// Training produced a non-finite loss.
struct DivergenceError : Error { using Error::Error; };

// Statistical model invalid (non positive definite covariance).
struct ModelError : Error { using Error::Error; };

struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace did3
