"""Exception types shared across the package."""


class GossipDPError(Exception):
    """Base class for all errors raised by gossipdp."""


class ParameterError(GossipDPError, ValueError):
    """An argument is outside its valid domain."""


class ParseError(GossipDPError, ValueError):
    """A text input could not be parsed.

    Attributes:
      line: 1-based line number of the offending line, or None.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(GossipDPError, ValueError):
    """A binary file does not follow the expected container format."""


class ModelError(GossipDPError, ValueError):
    """A threat model is inconsistent (e.g. the observer is the target)."""


class RangeError(GossipDPError, ArithmeticError):
    """The sensitivity direction is not in the range of the observation operator.

    The projected Gaussian equivalence requires the mean shift to lie in the
    column space of the noise operator; when it does not, the mechanism is not
    differentially private at any finite epsilon and no sensitivity is reported.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class ResourceError(GossipDPError, RuntimeError):
    """A computation would exceed a configured size limit."""
