#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gwgrid {

// Problem dimensions for one grid of related generalized least-squares fits:
// n individuals, p predictors per fit (p-1 shared covariate columns plus one
// variant column), m variant columns, t traits.
struct ProblemDims {
  std::int64_t n = 0;
  std::int64_t p = 0;
  std::int64_t m = 0;
  std::int64_t t = 0;

  void validate() const;
};

// Per-trait variance parameters: heritability h2 in [0,1) and total variance
// sigma2 > 0.  The per-trait covariance is sigma2*(h2*Phi + (1-h2)*I).
struct TraitScalars {
  double h2 = 0.0;
  double sigma2 = 1.0;
};

// ---------------------------------------------------------------------------
// Error hierarchy.  Everything thrown by this library derives from Error so
// callers can catch one type at the boundary; the subtypes exist because
// tests and the CLI distinguish failure classes.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension or argument preconditions violated.
struct DimensionError : Error {
  using Error::Error;
};

// Input matrix expected symmetric but is not (beyond tolerance).
struct NonSymmetricError : Error {
  using Error::Error;
};

// Dense backend (eigensolver / factorization) reported failure.
struct BackendError : Error {
  using Error::Error;
};

// A per-trait weight vector or a per-cell normal-equations matrix is not
// positive definite.  Carries grid coordinates when known (-1 = not
// applicable).
struct NotPositiveDefiniteError : Error {
  std::int64_t snp_index = -1;
  std::int64_t trait_index = -1;

  NotPositiveDefiniteError(const std::string& msg, std::int64_t snp,
                           std::int64_t trait)
      : Error(msg), snp_index(snp), trait_index(trait) {}
};

// Operating-system level I/O failure (open/read/write/resize).
struct IoError : Error {
  using Error::Error;
};

// Structural problems in a binary stream file.
struct StreamFormatError : IoError {
  using IoError::IoError;
};
struct BadMagicError : StreamFormatError {
  using StreamFormatError::StreamFormatError;
};
struct VersionMismatchError : StreamFormatError {
  using StreamFormatError::StreamFormatError;
};
struct KindMismatchError : StreamFormatError {
  using StreamFormatError::StreamFormatError;
};
struct TruncatedFileError : StreamFormatError {
  using StreamFormatError::StreamFormatError;
};
// File was created but never finalized (writer failed or crashed mid-run).
struct IncompleteStreamError : StreamFormatError {
  using StreamFormatError::StreamFormatError;
};

// No tile configuration fits the requested memory budget.
struct InfeasibleBudgetError : Error {
  using Error::Error;
};

}  // namespace gwgrid
