"""
Exception hierarchy for speq.

Every error also derives from the closest builtin, so callers that only know
about ValueError / ArithmeticError keep working.
"""


class SpeqError(Exception):
    """Base class for all speq errors"""


class SpectralParameterError(SpeqError, ValueError):
    """z is zero, on the positive real axis, or in the lower half-plane"""


class DimensionError(SpeqError, ValueError):
    """Array shapes are inconsistent or exceed the configured limits"""


class PreconditionError(SpeqError, ValueError):
    """An operation was called outside its documented preconditions"""


class DomainError(SpeqError, ValueError):
    """A parameter l lies outside the domain Omega attached to z"""


class InapplicableBoundError(SpeqError, ValueError):
    """A stability bound was requested where its hypothesis fails"""


class ValidityRegionError(SpeqError, ValueError):
    """A Monte Carlo sweep falls outside the region where the resolvent gap bound applies"""


class ConfigError(SpeqError, ValueError):
    """An experiment config file or CLI flag set is invalid"""


class NumericError(SpeqError, ArithmeticError):
    """A numerical routine failed (eigensolver, linear solve)"""


class DegeneracyError(NumericError):
    """The leave-one-out denominator 1 + x'G_x/n vanished numerically"""


class SingularUpdateError(NumericError):
    """A rank-one update produced a singular matrix"""


class ConsistencyError(NumericError):
    """Two characterizations of the same quantity disagree"""


class NonConvergenceError(NumericError):
    """
    A fixed-point iteration ran out of iterations.

    Carries the last iterate and its residual so callers can report them;
    `x` is set when the solve was part of a density grid.
    """

    def __init__(self, message, last_iterate=None, residual=None, iterations=None, x=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations
        self.x = x


class CheckFailedError(SpeqError, AssertionError):
    """A harness check (slope, threshold, agreement) did not hold"""
