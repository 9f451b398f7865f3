"""Exception hierarchy shared across the package.

Data errors (malformed input) and numerical errors (fitting failures) are
kept distinct so the CLI can map them to different exit codes.
"""


class SeqTrialsError(Exception):
    """Base class for all package errors."""


class DataError(SeqTrialsError):
    """Malformed or inconsistent input data."""


class NumericalError(SeqTrialsError):
    """A numerical procedure failed (non-convergence, separation, ...)."""


class SeparationError(NumericalError):
    """Perfect separation / monotone likelihood in a regression fit."""


class SingularDesignError(NumericalError):
    """Rank-deficient design matrix."""

    def __init__(self, column: int, name: str | None = None):
        self.column = column
        self.name = name
        label = name if name is not None else f"column {column}"
        super().__init__(f"design matrix is rank deficient: {label} is linearly "
                         f"dependent on earlier columns")


class PositivityError(SeqTrialsError):
    """An empty stratum makes an inverse-probability quantity undefined."""

    def __init__(self, stratum: str):
        self.stratum = stratum
        super().__init__(f"positivity violation: empty stratum {stratum}")
