"""Exception hierarchy shared by every hmamba module."""


class HMambaError(Exception):
    """Base class for all library errors."""


class DomainError(HMambaError, ValueError):
    """A geometric input lies off the manifold or outside a function's domain."""


class DegenerateError(HMambaError, ValueError):
    """A closed form hit a vanishing denominator."""


class ShapeError(HMambaError, ValueError):
    pass


class UnsupportedModeError(HMambaError, ValueError):
    pass


class VocabularyError(HMambaError, IndexError):
    pass


class NonDifferentiableError(HMambaError, ArithmeticError):
    """Backward pass reached a point where a primitive has no derivative."""


class NonFiniteError(HMambaError, ArithmeticError):
    pass


class TrainingAborted(NonFiniteError):
    """Raised when a batch produces a NaN/Inf loss or gradient."""

    def __init__(self, batch_index: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at batch {batch_index}")
        self.batch_index = batch_index


class FormatError(HMambaError, ValueError):
    pass


class EmptyDatasetError(HMambaError, ValueError):
    pass


class ProtocolError(HMambaError, ValueError):
    """Evaluation inputs violate the ranking protocol (e.g. target not a candidate)."""


class CompatibilityError(HMambaError, ValueError):
    """A checkpoint does not match the dataset or config it is used with."""
