#pragma once

#include <stdexcept>
#include <string>

namespace qdq {

// Error taxonomy mirrors the tool's exit codes:
//   ConfigError -> 2, ArtifactError -> 3, NumericError -> 4, VerifyError -> 5.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct ArtifactError : std::runtime_error {
  explicit ArtifactError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct VerifyError : std::runtime_error {
  explicit VerifyError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace qdq
