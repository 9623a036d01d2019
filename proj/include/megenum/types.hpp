#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>

namespace megenum {

using Vec3 = Eigen::Vector3d;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OrientationMode { fixed, free };

std::string_view to_string(OrientationMode mode);
OrientationMode parse_orientation_mode(std::string_view text);

// Error hierarchy. Every error the library raises derives from one of these
// so the CLI can map them onto its exit-code contract.

/// Precondition or geometry violation in caller-supplied input.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure could not produce a meaningful result.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Topography set is (numerically) rank deficient.
class DegenerateModel : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Model has no residual degrees of freedom left.
class ModelCapacityError : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

/// Target matrix is not positive definite.
class FactorizationError : public NumericalError {
public:
    FactorizationError(const std::string& what, int leading_minor)
        : NumericalError(what), leading_minor_(leading_minor) {}
    int leading_minor() const { return leading_minor_; }

private:
    int leading_minor_;
};

/// Malformed file or configuration text.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& source, int line, const std::string& message)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + message),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

}  // namespace megenum
