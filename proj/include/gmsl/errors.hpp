#pragma once

#include <stdexcept>
#include <string>

namespace gmsl {

// Base of everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data / contract violations. The CLI maps
// these to exit code 2.
struct DataError : Error {
    using Error::Error;
};

// Numerical failures (non-convergence). The CLI maps these to exit code 3.
struct NumericalError : Error {
    using Error::Error;
};

// --- molgraph ---------------------------------------------------------------
struct SyntaxError : DataError {
    using DataError::DataError;
};
struct RingClosureError : DataError {
    using DataError::DataError;
};
struct UnknownElementError : DataError {
    using DataError::DataError;
};
struct ValenceError : DataError {
    using DataError::DataError;
};
struct MultiFragmentError : DataError {
    using DataError::DataError;
};

// --- fingerprint -------------------------------------------------------------
struct WidthMismatchError : DataError {
    using DataError::DataError;
};

// --- diffcore ----------------------------------------------------------------
struct ShapeError : DataError {
    using DataError::DataError;
};
struct DomainError : DataError {
    using DataError::DataError;
};
struct NonScalarLossError : DataError {
    using DataError::DataError;
};

// --- similarity / loss -------------------------------------------------------
struct ZeroNormError : DataError {
    using DataError::DataError;
};
struct DimensionMismatchError : DataError {
    using DataError::DataError;
};
struct NonPositiveTemperatureError : DataError {
    using DataError::DataError;
};
struct IdMismatchError : DataError {
    using DataError::DataError;
};
struct WeightSumError : DataError {
    using DataError::DataError;
};
struct EmptyPoolError : DataError {
    using DataError::DataError;
};

// --- dataio ------------------------------------------------------------------
struct ParseError : DataError {
    using DataError::DataError;
};
struct DuplicateIdError : DataError {
    using DataError::DataError;
};
struct EmptyDatasetError : DataError {
    using DataError::DataError;
};
struct UnknownMoleculeError : DataError {
    using DataError::DataError;
};
struct BadAtomIndexError : DataError {
    using DataError::DataError;
};
struct MagicError : DataError {
    using DataError::DataError;
};
struct VersionError : DataError {
    using DataError::DataError;
};
struct CorruptionError : DataError {
    using DataError::DataError;
};

// --- trainer -----------------------------------------------------------------
struct MissingModalityError : DataError {
    using DataError::DataError;
};
struct EmptyNodePoolError : DataError {
    using DataError::DataError;
};
struct NonConvergenceError : NumericalError {
    NonConvergenceError(const std::string& msg, double achieved_deviation, std::size_t steps)
        : NumericalError(msg), achieved_deviation(achieved_deviation), steps(steps) {}
    double achieved_deviation;
    std::size_t steps;
};

// --- evalkit -----------------------------------------------------------------
struct DegenerateLabelsError : DataError {
    using DataError::DataError;
};
struct InsufficientDataError : DataError {
    using DataError::DataError;
};
struct LengthMismatchError : DataError {
    using DataError::DataError;
};

}  // namespace gmsl
