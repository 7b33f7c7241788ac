#pragma once

#include <stdexcept>
#include <string>

namespace nes {

/// Malformed input that cannot be interpreted (bad JSON, missing fields).
class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input that violates a data invariant.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Parameters outside the domain of a density or formula.
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Iterative fit failed to reach an acceptable solution.
class ConvergenceError : public std::runtime_error {
public:
  ConvergenceError(const std::string& what, std::string diagnostics)
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}

  const std::string& diagnostics() const noexcept { return diagnostics_; }

private:
  std::string diagnostics_;
};

/// Entity annotations do not match the chunk text they describe.
class IntegrityError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Embedding endpoint failed after the bounded number of retries.
class TransportError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace nes
