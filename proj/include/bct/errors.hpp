#pragma once

#include <stdexcept>
#include <string>

namespace bct {

// Base of every error raised by the library. `kind()` is a stable
// machine-readable tag, used by the CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& what)
      : Error("degenerate_input", what) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what)
      : Error("invalid_argument", what) {}
};

struct UnresolvableClassError : Error {
  explicit UnresolvableClassError(const std::string& what)
      : Error("unresolvable_class", what) {}
};

struct DivergenceError : Error {
  DivergenceError(const std::string& what, int epoch, int batch)
      : Error("divergence", what), epoch(epoch), batch(batch) {}
  int epoch;
  int batch;
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

struct InvalidGainError : Error {
  explicit InvalidGainError(const std::string& what)
      : Error("invalid_gain", what) {}
};

}  // namespace bct
