"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
stable contract: 1 validation, 2 numerical non-convergence, 3 I/O.
"""

from __future__ import annotations


class TollNetError(Exception):
    exit_code = 1


class ValidationError(TollNetError, ValueError):
    exit_code = 1


class ParseError(ValidationError):
    """Config file could not be parsed (message carries line/field info)."""


class SelfLoop(ValidationError):
    pass


class UnknownNode(ValidationError):
    pass


class OriginEqualsDestination(ValidationError):
    pass


class UncoveredLink(ValidationError):
    pass


class NoPath(ValidationError):
    pass


class CapExceeded(ValidationError):
    pass


class NotOnSimplex(ValidationError):
    pass


class NegativeDensity(ValidationError):
    pass


class CapacityExceeded(ValidationError):
    pass


class CapacityTooSmall(ValidationError):
    pass


class AllPathsBlocked(ValidationError):
    pass


class TooManyPaths(ValidationError):
    pass


class NumericalError(TollNetError, ArithmeticError):
    exit_code = 2


class IntegratorDiverged(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class FixedPointNotConverged(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class IoError(TollNetError, OSError):
    exit_code = 3
