#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace danil {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

// Raised when an operation produces or receives NaN/Inf.
class NonFiniteError : public Error {
public:
    NonFiniteError(std::string op, std::string detail)
        : Error("non-finite value in " + op + (detail.empty() ? "" : ": " + detail)),
          op_(std::move(op)), detail_(std::move(detail)) {}

    // `sample` is the position of the offending sample within its batch.
    NonFiniteError(std::string op, std::string detail, std::size_t sample)
        : Error("non-finite value in " + op + ": sample " + std::to_string(sample) +
                (detail.empty() ? "" : ": " + detail)),
          op_(std::move(op)), detail_(std::move(detail)), sample_(sample) {}

    const std::string& op() const noexcept { return op_; }
    const std::string& detail() const noexcept { return detail_; }
    std::optional<std::size_t> sample() const noexcept { return sample_; }

private:
    std::string op_;
    std::string detail_;
    std::optional<std::size_t> sample_;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class TapeMismatchError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

} // namespace danil
