#ifndef VARHOR_ERRORS_HPP
#define VARHOR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace varhor {

enum class ErrorCode {
    // validation-class errors (CLI exit code 2)
    SyntaxError,
    UnknownVariable,
    MissingBinding,
    SchemaError,
    DimensionMismatch,
    UnknownProblem,
    DerivativeCheckFailed,
    DirectionLeavesBox,
    MissingDerivative,
    // numerical-class errors (CLI exit code 3)
    DomainError,
    NonFiniteState,
    NonFiniteBackward,
    NonFiniteAdjoint,
    SingularRegression,
    DegenerateH,
    LineSearchStalled,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, std::string msg)
        : std::runtime_error(std::move(msg)), code_(code) {}

    ErrorCode code() const { return code_; }

    // Validation errors come from bad inputs; numerical errors from the solvers.
    bool is_validation() const { return code_ < ErrorCode::DomainError; }

  private:
    ErrorCode code_;
};

const char* error_code_name(ErrorCode code);

} // namespace varhor

#endif
