"""Exception hierarchy.

Everything raised for a numerical reason derives from :class:`NumericalError`
so the CLI can map it to a distinct exit status.
"""


class MpembaError(Exception):
    """Base class for all package errors."""


class InvalidState(MpembaError, ValueError):
    """Input is not a valid density matrix (or ket) within tolerance."""


class DimensionMismatch(MpembaError, ValueError):
    pass


class NumericalError(MpembaError, ArithmeticError):
    """A computation could not be carried out reliably."""


class NonDiagonalizable(NumericalError):
    pass


class DegenerateSteadyState(NumericalError):
    pass


class OscillatoryMode(NumericalError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"mode {index} has zero real part")


class ComplexSlowMode(NumericalError):
    pass


class NoSignChange(NumericalError):
    pass


class DegenerateAtSteadyState(NumericalError):
    pass


class GridMismatch(MpembaError, ValueError):
    pass


class TiedStart(MpembaError, ValueError):
    """Both initial distances agree within tolerance; the pair has no ordering."""
