#pragma once

#include <stdexcept>
#include <string>

namespace specstab {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Sizes of P, m, w, labels disagree with (n, k).
class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// A config file could not be parsed; message carries field context.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A parsed model failed validation (stochasticity, finiteness, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Argument outside its documented range.
class OutOfRange : public Error {
public:
    using Error::Error;
};

/// The augmented stationary system is numerically singular.
class SingularSystem : public Error {
public:
    using Error::Error;
};

/// Dense operator dimension above the supported cap.
class CapacityExceeded : public Error {
public:
    using Error::Error;
};

/// Dense eigenvalue iteration failed to converge.
class ConvergenceFailure : public Error {
public:
    using Error::Error;
};

/// An analytic formula was requested outside its hypotheses
/// (e.g. complex or repeated mean-matrix eigenvalues).
class HypothesisViolated : public Error {
public:
    using Error::Error;
};

/// The maximal eigenvalue group is not real/semisimple with a spectral gap.
class NotDominant : public Error {
public:
    using Error::Error;
};

/// A coupling/convergence run was requested at a gain outside the stable region.
class UnstableGain : public Error {
public:
    using Error::Error;
};

/// Newton iteration did not converge.
class NoConvergence : public Error {
public:
    using Error::Error;
};

/// Newton Jacobian is numerically singular.
class SingularJacobian : public Error {
public:
    using Error::Error;
};

/// A reference-curve fit was violated in strict mode.
class FitFailure : public Error {
public:
    using Error::Error;
};

/// ODE trajectory left the admissible ball.
class Blowup : public Error {
public:
    using Error::Error;
};

} // namespace specstab
