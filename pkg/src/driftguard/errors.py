"""Exception taxonomy shared by every driftguard module.

Each exception carries an ``exit_code`` used by the command-line frontend:
2 for problems with user-supplied input (files, flags, shapes, parameter
ranges) and 3 for internal numerical failures (non-convergence, degenerate
fits, non-finite intermediates).
"""

from __future__ import annotations


class DriftGuardError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class UserInputError(DriftGuardError):
    """Base for errors caused by caller-supplied input."""

    exit_code = 2


class NumericalFailure(DriftGuardError):
    """Base for internal numerical failures."""

    exit_code = 3


class FormatError(UserInputError):
    """File does not follow the expected on-disk format."""


class DataError(UserInputError):
    """Decoded data violates a domain invariant (non-finite, truncated, empty)."""


class IoError(UserInputError):
    """Underlying file system operation failed."""


class ShapeError(UserInputError):
    """Array dimensions do not agree with the model or with each other."""


class ParameterError(UserInputError):
    """A parameter is outside its documented domain."""


class DegenerateInputError(UserInputError):
    """Input is degenerate for the requested operation (e.g. a zero vector)."""


class MetricError(UserInputError):
    """Score set unsuitable for the requested metric (missing labels or a class)."""


class SelectionError(UserInputError):
    """Model-selection grid is empty or incompatible with the data."""


class ConvergenceError(NumericalFailure):
    """Iterative solver exhausted its iteration budget.

    The best iterate reached is attached as ``model`` when available.
    """

    def __init__(self, message: str, model=None):
        super().__init__(message)
        self.model = model


class NumericalError(NumericalFailure):
    """A non-finite value appeared where a finite one is required."""


class DegenerateFitError(NumericalFailure):
    """A fitted component collapsed (singular covariance, empty component)."""


class GridSearchError(NumericalFailure):
    """Every hyperparameter trial failed."""


class TrainError(NumericalFailure):
    """Every training run diverged."""
