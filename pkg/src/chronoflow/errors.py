"""Exception types shared across the package."""


class ChronoflowError(Exception):
    """Base class for all package errors."""


class DimensionError(ChronoflowError):
    """A field and an operation disagree about grids or axes."""


class OutOfDomainError(ChronoflowError):
    """A coordinate fell outside the grid bounding box."""

    def __init__(self, axis, value, lo, hi):
        self.axis = axis
        self.value = value
        super().__init__(
            f"coordinate {value!r} on axis {axis!r} outside [{lo}, {hi}]"
        )


class DegenerateStateError(ChronoflowError):
    """A state has no usable probability mass (e.g. all-zero marginal)."""


class NumericalError(ChronoflowError):
    """A numerical routine failed to converge or drifted out of tolerance."""


class EmptyFieldError(ChronoflowError):
    """A reduction or histogram was requested over no data."""


class MissingArtifactError(ChronoflowError):
    """A named pipeline artifact is absent from the output directory."""


class StageError(ChronoflowError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
