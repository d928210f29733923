"""Exception types shared across the package."""


class MixenumError(Exception):
    """Base class for package errors."""


class ContractViolation(MixenumError, ValueError):
    """An argument violates a documented precondition (dimension mismatch, bad range)."""


class EstimationError(MixenumError):
    """A numerical failure during likelihood or posterior evaluation."""


class DegenerateStepError(EstimationError):
    """An EM step collapsed a class (posterior column sum below threshold)."""

    def __init__(self, class_index: int, column_sum: float):
        self.class_index = class_index
        self.column_sum = column_sum
        super().__init__(
            f"class {class_index} collapsed during M-step (posterior mass {column_sum:.3e})"
        )


class TestUnavailableError(MixenumError):
    """A likelihood-ratio test cannot be computed (nonconverged input fits)."""


class NoSelectionError(MixenumError):
    """A class-count selection rule received no usable candidates."""


class SeparationError(MixenumError):
    """Logistic regression detected complete separation on a column."""

    def __init__(self, column: int, name: str | None = None):
        self.column = column
        self.name = name
        label = name if name is not None else f"column {column}"
        super().__init__(f"complete separation detected on {label}")
