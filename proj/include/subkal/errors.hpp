#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace subkal {

// Base class for all library errors. `kind()` is a stable machine-readable
// tag; the CLI prints failures as "ERROR(<kind>): <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct FactorizationFailed : Error {
  explicit FactorizationFailed(const std::string& m) : Error("FactorizationFailed", m) {}
};

struct InnerSolveFailed : Error {
  explicit InnerSolveFailed(const std::string& m) : Error("InnerSolveFailed", m) {}
};

struct SolveFailed : Error {
  explicit SolveFailed(const std::string& m) : Error("SolveFailed", m) {}
};

struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& m) : Error("DimensionMismatch", m) {}
};

struct EigDecompFailed : Error {
  explicit EigDecompFailed(const std::string& m) : Error("EigDecompFailed", m) {}
};

struct OptimFailed : Error {
  explicit OptimFailed(const std::string& m) : Error("OptimFailed", m) {}
};

struct AssemblyFailed : Error {
  explicit AssemblyFailed(const std::string& m) : Error("AssemblyFailed", m) {}
};

struct NonFiniteState : Error {
  explicit NonFiniteState(const std::string& m) : Error("NonFiniteState", m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("IoError", m) {}
};

}  // namespace subkal
