#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adaresnet {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Shapes or channel counts that do not fit together.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// NaN/Inf produced where finite values were required.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// Invalid model, training or analysis configuration.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Misuse of the autodiff tape or the optimizers (non-scalar loss, missing gradient, ...).
class GradientError : public Error {
  public:
    using Error::Error;
};

enum class ParseErrorKind {
    io,
    bad_magic,
    truncated,
    trailing_bytes,
    count_mismatch,
    bad_length,
    bad_label,
    bad_format,
};

inline const char* to_string(ParseErrorKind kind) {
    switch (kind) {
    case ParseErrorKind::io: return "io";
    case ParseErrorKind::bad_magic: return "bad_magic";
    case ParseErrorKind::truncated: return "truncated";
    case ParseErrorKind::trailing_bytes: return "trailing_bytes";
    case ParseErrorKind::count_mismatch: return "count_mismatch";
    case ParseErrorKind::bad_length: return "bad_length";
    case ParseErrorKind::bad_label: return "bad_label";
    case ParseErrorKind::bad_format: return "bad_format";
    }
    return "unknown";
}

/// Malformed dataset, checkpoint or CSV input. `kind()` tells the cases apart.
class ParseError : public Error {
  public:
    ParseError(ParseErrorKind kind, const std::string& what)
        : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ParseErrorKind kind() const noexcept { return kind_; }

  private:
    ParseErrorKind kind_;
};

/// Non-finite loss or gradient during training; carries where it happened.
class DivergenceError : public NumericError {
  public:
    DivergenceError(std::size_t epoch, std::size_t batch)
        : NumericError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch)),
          epoch_(epoch), batch_(batch) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

  private:
    std::size_t epoch_;
    std::size_t batch_;
};

} // namespace adaresnet
