"""Exception types shared across the toolkit."""

from __future__ import annotations


class CgcError(Exception):
    """Base class for every error raised by the toolkit."""


class InputError(CgcError):
    """Malformed user input (graph declarations, data files, options)."""


class NumericalError(CgcError):
    """A numerical routine could not produce a usable answer."""


class NotPositiveDefinite(NumericalError):
    pass


class UnsupportedFunctional(CgcError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class DegenerateWindow(NumericalError):
    pass


class InfeasibleConstraint(NumericalError):
    pass


class ShapeMismatch(InputError):
    pass


class MissingValue(InputError):
    pass


class UnknownNode(InputError):
    pass


class MissingKernel(InputError):
    pass


class InvalidGraph(InputError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"invalid graph: {lines}")


class ParseError(InputError):
    """Positioned syntax or name-resolution error in a ``.cgc`` program."""

    def __init__(self, message: str, line: int, column: int, token: str = ""):
        self.message = message
        self.line = line
        self.column = column
        self.token = token
        where = f"line {line}, column {column}"
        if token:
            where += f" near {token!r}"
        super().__init__(f"{where}: {message}")
