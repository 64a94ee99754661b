"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MdplaceError(Exception):
    """Base class for every error raised by the package."""


class GridValidationError(MdplaceError, ValueError):
    """A grid description is structurally invalid.

    ``element`` carries the id of the offending node or line when known.
    """

    def __init__(self, message: str, element: int | None = None):
        super().__init__(message)
        self.element = element


class NotRadial(GridValidationError):
    pass


class DuplicateParent(GridValidationError):
    pass


class BadSlack(GridValidationError):
    pass


class UnknownNode(MdplaceError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class UnknownLine(MdplaceError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ParseError(MdplaceError, ValueError):
    """Malformed input file. ``context`` names the file section or element."""

    def __init__(self, message: str, context: str | None = None):
        if context:
            message = f"{context}: {message}"
        super().__init__(message)
        self.context = context


class NumericalError(MdplaceError, ArithmeticError):
    pass


class ZeroVoltage(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations


class SingularGain(NumericalError):
    pass


class TooManyFailures(NumericalError):
    def __init__(self, message: str, failures: int, realizations: int):
        super().__init__(message)
        self.failures = failures
        self.realizations = realizations


class BudgetExhausted(MdplaceError):
    """Greedy search hit ``max_devices`` before the cost reached zero.

    The partial :class:`~mdplace.placement.PlacementResult` is attached.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class InfeasibleSpec(MdplaceError, ValueError):
    pass
