#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semiroute {

enum class ErrorCategory {
  io,
  alignment,
  parse,
  format,
  config,
  validation,
  degenerate_input,
  degenerate_centroid,
  routing,
  unavailable,
  timeout,
  backend,
  classifier,
  embedder,
};

/// Machine-parsable name of a category, e.g. "degenerate_input".
std::string_view category_name(ErrorCategory category);

/// Base exception for every failure raised by the library. The category is
/// stable and is what the CLI prints as the first token of an error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace semiroute

#include <optional>
#include <utility>
#include <variant>

namespace semiroute {

/// A value or the Error that prevented it; used where failures are reported
/// per item instead of aborting the whole operation.
template <typename T>
class Outcome {
 public:
  Outcome(T value) : state_(std::move(value)) {}
  Outcome(Error error) : state_(std::move(error)) {}

  bool ok() const noexcept { return std::holds_alternative<T>(state_); }
  explicit operator bool() const noexcept { return ok(); }

  const T& value() const {
    if (!ok()) throw std::get<Error>(state_);
    return std::get<T>(state_);
  }
  T& value() {
    if (!ok()) throw std::get<Error>(state_);
    return std::get<T>(state_);
  }
  const Error& error() const { return std::get<Error>(state_); }

 private:
  std::variant<T, Error> state_;
};

}  // namespace semiroute
