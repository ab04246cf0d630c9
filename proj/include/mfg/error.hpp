#pragma once

#include <stdexcept>
#include <string>

namespace mfg {

enum class ErrorCode {
    invalid_argument,
    mass_imbalance,
    unsupported_dimension,
    unsupported_model,
    oracle_too_large,
    cfl_violation,
    grid_mismatch,
    infeasible_construction,
    solver_failure,
    config,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Thrown by the forward solver when the explicit transport step would lose
// positivity; carries the largest step that would have been accepted.
class CflError : public Error {
public:
    CflError(const std::string& message, double admissible_dt)
        : Error(ErrorCode::cfl_violation, message), admissible_dt_(admissible_dt) {}
    double admissible_dt() const noexcept { return admissible_dt_; }

private:
    double admissible_dt_;
};

}  // namespace mfg
