"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, data errors -> 3,
numeric errors -> 4. Library users can catch ``AgeCurveError`` for anything
raised deliberately by this package.
"""


class AgeCurveError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AgeCurveError):
    """Invalid or inconsistent run configuration."""


class DataError(AgeCurveError):
    """Input data cannot be used as requested."""


class NumericError(AgeCurveError):
    """A numeric procedure failed or produced an unusable result."""


# -- basis / smoothing ------------------------------------------------------

class InvalidKnots(NumericError, ValueError):
    """Knot sequence is not strictly increasing or lies outside the endpoints."""


class OutOfDomain(NumericError, ValueError):
    """Evaluation point falls outside the basis domain."""


class SingularFit(NumericError):
    """Penalized least-squares system is rank deficient."""


# -- ensemble decompositions ------------------------------------------------

class BasisMismatch(NumericError, ValueError):
    """Curves passed together do not share one basis."""


class InsufficientData(DataError):
    """Too few subjects or observations for the requested operation."""


class NumericalError(NumericError):
    """Decomposition produced values outside numerical tolerances."""


class SparseCoverage(DataError):
    """Pooled observation times leave gaps too wide for surface estimation."""


class CovarianceUnidentified(DataError):
    """No subject contributes an off-diagonal covariance pair."""


class CVUndefined(DataError):
    """Cross-validation impossible: every subject has a single observation."""


# -- tests / clustering -----------------------------------------------------

class EmptyGroup(DataError, ValueError):
    """A test group contains no observations."""


class ZeroMargin(DataError, ValueError):
    """Contingency table has an all-zero row or column."""


class InvalidK(DataError, ValueError):
    """Requested more clusters than points."""


class NearPeakUndefined(NumericError):
    """Near-peak interval is undefined for non-positive peak values."""


# -- ingestion ----------------------------------------------------------------

class IoError(DataError, OSError):
    """Input file is missing or unreadable."""


class SchemaError(DataError):
    """Input file is missing a required column."""


class InvalidDate(DataError, ValueError):
    """Reference date precedes the birth date."""
