"""Exception hierarchy.

Input problems (bad data, bad config) and numerical failures are kept in
separate branches so the CLI can map them to distinct exit codes.
"""


class AuctionQRError(Exception):
    """Base class for all package errors."""


class InputError(AuctionQRError):
    """Invalid user input: bad arguments, malformed data, unknown names."""


class DataSchemaError(InputError):
    """CSV schema violation; carries the offending row when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class NumericalError(AuctionQRError):
    """Numerical failure: solver breakdown, quadrature failure, ..."""


class SolverError(NumericalError):
    """Interior-point solver failed to reach the requested tolerance."""


class DegenerateQuantileError(NumericalError):
    """Standard quantile regression is degenerate at an extreme level."""


class QuadratureError(NumericalError):
    """Quadrature did not reach the requested accuracy."""
