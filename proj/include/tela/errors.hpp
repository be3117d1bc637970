#pragma once

#include <stdexcept>
#include <string>

namespace tela {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// malformed or invalid user input (scene files, CLI configs, checkpoints)
struct ConfigError : Error {
  using Error::Error;
};

// filesystem failures
struct IoError : Error {
  using Error::Error;
};

// guidance-provider failures
struct GuidanceError : Error {
  using Error::Error;
};
// response arrived but violates the wire protocol
struct ProtocolError : GuidanceError {
  using GuidanceError::GuidanceError;
};
// server answered with a non-2xx status
struct ServiceError : GuidanceError {
  using GuidanceError::GuidanceError;
};
// no response after the configured retries; safe to retry later
struct RetriableError : GuidanceError {
  using GuidanceError::GuidanceError;
};

}  // namespace tela
