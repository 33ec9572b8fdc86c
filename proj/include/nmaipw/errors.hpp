#pragma once

#include <stdexcept>
#include <string>

namespace nmaipw {

/// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Input / validation errors (CLI exit code 1)
// ---------------------------------------------------------------------------

class InputError : public Error {
public:
    using Error::Error;
};

/// Malformed row or unparsable field in an input file.
class ParseError : public InputError {
public:
    using InputError::InputError;
};

/// Missing or misnamed column, wrong header.
class SchemaError : public InputError {
public:
    using InputError::InputError;
};

/// A structural invariant of the dataset is violated.
class ValidationError : public InputError {
public:
    using InputError::InputError;
};

/// Shared-arm covariance incompatible with the comparison variances.
class NotPositiveDefinite : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Multi-arm published study without a shared-arm variance.
class MissingCovariance : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Requested an outcome-derived quantity from a registry-only study.
class Unpublished : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class UnknownTreatment : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// No unpublished studies: the selection model is degenerate.
class AllPublished : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A pairwise standard error needed for ranking is unavailable.
class MissingSE : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class TooFewStudies : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// ---------------------------------------------------------------------------
// Numerical failures (CLI exit code 2)
// ---------------------------------------------------------------------------

class NumericalError : public Error {
public:
    using Error::Error;
};

/// Cholesky failure on a per-study covariance.
class SingularCovariance : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Optimizer failed after all restarts.
class NonConvergence : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Root finder exhausted its restart grid.
class NoRoot : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// More than the tolerated share of bootstrap or simulation replicates failed.
class TooManyFailures : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace nmaipw
