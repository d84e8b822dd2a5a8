"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class SingularityError(ArithmeticError):
    """An operation hit a singular value (e.g. reciprocal of zero)."""


class ValidationError(ValueError):
    """Input data violates a structural requirement."""


class EmptySelectionError(ValueError):
    """A mask or index selection came up empty where at least one item is required."""


class DatasetError(ValidationError):
    """A dataset directory or file failed to parse or validate."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss.

    Carries the last epoch with a finite loss and the partial report gathered
    up to that point.
    """

    def __init__(self, message, last_finite_epoch=None, partial_report=None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
        self.partial_report = partial_report
