"""Exception hierarchy shared across the package.

CLI exit-code mapping: SceneError and DomainError family -> 2,
NumericalError family -> 3, usage problems -> 64.
"""


class SodeflowError(Exception):
    """Base class for all package errors."""


class ExprSyntaxError(SodeflowError):
    """Raised by the expression parser; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalDomainError(SodeflowError):
    """Non-finite or out-of-domain result while evaluating an expression."""


class DomainError(SodeflowError):
    """A geometric-domain violation (zero section, chart box, verticality...)."""


class NotVerticalError(DomainError):
    """Connector K applied to a double tangent with a nonzero base velocity."""


class OutsideDomainError(DomainError):
    """Requested parameter lies outside the maximal interval of a geodesic.

    Carries the one-sided escape estimate that was hit, when available.
    """

    def __init__(self, message: str, bound=None):
        super().__init__(message)
        self.bound = bound


class SceneError(SodeflowError):
    """Scene-file parse or validation failure; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(SodeflowError):
    """Breakdown of a numerical procedure (singular solve, no convergence...)."""
