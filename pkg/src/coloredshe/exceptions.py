"""Exception hierarchy shared by every module."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Evaluation at a point where the function is infinite."""


class ConfigurationError(ValueError):
    """Inconsistent numerical configuration (e.g. an unstable time step)."""


class NumericError(ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""


class ConditioningError(NumericError):
    """A covariance matrix was too close to singular to solve against."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ContractError(RuntimeError):
    """A runtime monitor observed a violated modelling assumption."""


class CoverageError(IndexError):
    """A requested grid point is not covered by the simulated lattice."""


class FitError(ValueError):
    """Too few usable points for a regression."""
