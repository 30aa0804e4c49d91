#pragma once

#include <stdexcept>
#include <string>

namespace voltgame {

/// Base class for all voltgame errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed network or scenario document. Message carries file/line context.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Structurally valid input that violates a model invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Vector or matrix dimensions disagree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// AC power flow failure.
class PowerFlowError : public Error {
public:
    enum class Kind {
        NonConvergence,    ///< mismatch above tolerance after max iterations
        SingularJacobian,  ///< singular or non-finite Newton step (collapse region)
    };

    PowerFlowError(Kind k, const std::string& msg, double mismatch, int iterations)
        : Error(msg), kind(k), mismatch(mismatch), iterations(iterations) {}

    Kind kind;
    double mismatch;
    int iterations;
};

/// Linearization produced a non-negative diagonal entry of X, i.e. the
/// demand-positive sign convention does not hold at the operating point.
class SignConventionViolation : public Error {
public:
    using Error::Error;
};

/// Inner loop reached its iteration cap before meeting the tolerance.
class InnerLoopStall : public Error {
public:
    InnerLoopStall(const std::string& msg, double residual, long iterations)
        : Error(msg), residual(residual), iterations(iterations) {}

    double residual;
    long iterations;
};

/// Plant power flow diverged during a co-design run. The trace recorded up to
/// the failing outer iteration remains valid.
class PlantInfeasible : public Error {
public:
    PlantInfeasible(const std::string& msg, int outer_iter)
        : Error(msg), outer_iter(outer_iter) {}

    int outer_iter;
};

}  // namespace voltgame
