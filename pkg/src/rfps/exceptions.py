"""Exception types shared across the estimators.

Plain ``ValueError`` is used for argument/precondition violations (bad trim
counts, out-of-range probabilities, malformed specs).  The classes below mark
failure modes that callers may want to catch and handle separately.
"""


class DegenerateDataError(ValueError):
    """The data lacks the variation the estimator needs (zero spread,
    identical rows, too few usable observations, no valid start)."""


class RankDeficientError(ValueError):
    """A design matrix (possibly after weighting) does not have full column
    rank."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""
