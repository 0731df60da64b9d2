#pragma once

#include <stdexcept>
#include <string>

namespace sg {

// Bad caller input: shape mismatches, out-of-range parameters, malformed files.
// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside a mathematical domain (zero-norm vector, negative eigenvalue
// where SPD is required). Treated as a caller problem, exit code 2.
class DomainError : public ValidationError {
public:
    explicit DomainError(const std::string& msg) : ValidationError(msg) {}
};

// Malformed on-disk data; carries the byte offset of the first bad byte.
class FormatError : public ValidationError {
public:
    FormatError(const std::string& msg, std::size_t offset)
        : ValidationError(msg + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// An algorithm failed to converge or produced non-finite values.
// The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sg
