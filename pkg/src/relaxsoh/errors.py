"""Exception hierarchy.

Two broad classes matter for the CLI exit codes: ``DataError`` (bad or
inconsistent input, exit 3) and ``NumericalError`` (a computation that could
not be completed soundly, exit 4). Everything raised by this package derives
from ``RelaxSohError``.
"""


class RelaxSohError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RelaxSohError):
    """Invalid, malformed, or inconsistent input data."""


class NumericalError(RelaxSohError):
    """A numeric routine failed to produce a trustworthy result."""


# -- data errors --------------------------------------------------------------


class MalformedRow(DataError):
    def __init__(self, row_number, reason):
        self.row_number = row_number
        self.reason = reason
        super().__init__(f"row {row_number}: {reason}")


class DuplicateCycle(DataError):
    def __init__(self, cell_id, cycle_number):
        self.cell_id = cell_id
        self.cycle_number = cycle_number
        super().__init__(f"duplicate (cell_id={cell_id!r}, cycle={cycle_number})")


class NonMonotoneTime(DataError):
    def __init__(self, cell_id, cycle_number):
        self.cell_id = cell_id
        self.cycle_number = cycle_number
        super().__init__(
            f"times not strictly increasing (cell_id={cell_id!r}, cycle={cycle_number})"
        )


class EmptyTruncation(DataError):
    """No sample survives truncation to the requested duration."""


class UnknownDatasetId(DataError):
    pass


class TooFewSamples(DataError):
    pass


class ZeroCurrent(DataError):
    """Cutoff current is zero; the relaxation model degenerates."""


class NonFiniteInput(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyCondition(DataError):
    pass


class InsufficientCells(DataError):
    pass


class MissingTemperature(DataError):
    pass


class InvalidProfile(DataError):
    pass


# -- numerical errors ----------------------------------------------------------


class NoConvergence(NumericalError):
    """Iteration cap reached with the gradient norm still above tolerance."""


class NotPositiveDefinite(NumericalError):
    """Kernel matrix not factorizable even after maximum jitter."""


class NegativeR0(NumericalError):
    """Series resistance came out negative; the fit is inconsistent."""

    def __init__(self, value):
        self.value = value
        super().__init__(f"negative series resistance: {value:.6g} Ohm")


class DataWarning(UserWarning):
    """Non-fatal data issues (unexpected grids, lenient-mode violations)."""
