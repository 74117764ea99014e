#pragma once

// Common numeric aliases and the error types shared by every module.

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace daebayes {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kPi = 3.14159265358979323846;

/// Raised for malformed inputs: dimension mismatches, degenerate branches,
/// unknown config keys, and the like.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class FailureKind {
    PfDiverged,          // equilibrium / power-flow Newton did not converge
    StepDiverged,        // an integration step's Newton did not converge
    SensitivitySingular  // algebraic Jacobian not invertible
};

inline const char* to_string(FailureKind kind) {
    switch (kind) {
        case FailureKind::PfDiverged: return "PF_DIVERGED";
        case FailureKind::StepDiverged: return "STEP_DIVERGED";
        case FailureKind::SensitivitySingular: return "SENSITIVITY_SINGULAR";
    }
    return "UNKNOWN";
}

/// Numerical failure of a forward solve. Inside the posterior this is the
/// signal for an infeasible (-inf) evaluation, never a fatal error.
class SolverFailure : public std::runtime_error {
public:
    SolverFailure(FailureKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    FailureKind kind() const noexcept { return kind_; }

private:
    FailureKind kind_;
};

}  // namespace daebayes
