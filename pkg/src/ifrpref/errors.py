"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class ConvergenceError(RuntimeError):
    """A numerical optimiser or MCMC run failed to converge.

    Attributes
    ----------
    residual : float or None
        Final objective value / diagnostic at the point of failure.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DataError(DomainError):
    """Malformed input data; ``row`` is the 1-based data row number when known."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class IdentificationError(DomainError):
    """The identification problem has no feasible average IFR."""
