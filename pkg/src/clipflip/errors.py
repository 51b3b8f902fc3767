"""Exception hierarchy.

Two families: :class:`ValidationError` for bad inputs or contract violations
(CLI exit code 2) and :class:`NumericalError` for singular or degenerate
numerics (CLI exit code 3).
"""

from __future__ import annotations


class ClipError(Exception):
    """Base class for all package errors."""

    module = "clipflip"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class ValidationError(ClipError, ValueError):
    exit_code = 2


class NumericalError(ClipError, ArithmeticError):
    exit_code = 3


# data-model
class MissingColumn(ValidationError):
    module = "data"


class NonFiniteValue(ValidationError):
    module = "data"


class MissingValue(ValidationError):
    module = "data"


class SingleClusterInput(ValidationError):
    module = "data"


class UnbalancedOutcomes(ValidationError):
    module = "data"


class ItemMissingForParticipant(ValidationError):
    module = "data"


class InvalidHypothesis(ValidationError):
    module = "data"


# working-covariance
class NonPositiveVariance(ValidationError):
    module = "weights"


class NotSymmetric(ValidationError):
    module = "weights"


class NotPositiveDefinite(ValidationError):
    module = "weights"


class ShapeMismatch(ValidationError):
    module = "weights"


class DegenerateResiduals(NumericalError):
    module = "weights"


# score-engine
class SingularNuisance(NumericalError):
    module = "scores"


class DegenerateScore(NumericalError):
    module = "scores"


# resampler
class EnumerationTooLarge(ValidationError):
    module = "flips"


class InvalidB(ValidationError):
    module = "flips"


class DimensionMismatch(ValidationError):
    module = "flips"


# combine-multiplicity
class UnknownCombiner(ValidationError):
    module = "combine"


# baselines
class RankDeficientDesign(NumericalError):
    module = "baselines"


class LeverageOne(NumericalError):
    module = "baselines"


class DegenerateFit(NumericalError):
    module = "baselines"


# sim-harness
class InvalidCorrelation(ValidationError):
    module = "sim"


class UnknownMethod(ValidationError):
    module = "sim"


class ConfigError(ValidationError):
    module = "sim"
