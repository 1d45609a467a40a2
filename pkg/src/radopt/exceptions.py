"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shape does not match the manifold or the base point."""


class FeasibilityError(ValueError):
    """A point violates the manifold's defining constraint."""


class RetractionError(ArithmeticError):
    """The retraction could not be evaluated (e.g. rank-deficient QR input)."""


class PoisonedStateError(FloatingPointError):
    """A non-finite gradient reached the optimizer state."""


class DivergenceError(ArithmeticError):
    """An objective value became non-finite or exceeded the divergence cap."""


class IdxFormatError(ValueError):
    """The file is not an unsigned-byte 3-dimensional IDX image file."""


class IdxLengthError(ValueError):
    """The IDX payload is shorter than its header announces."""


class RatingsParseError(ValueError):
    """A ratings row could not be parsed; ``lineno`` is 1-based."""

    def __init__(self, message, lineno):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
