"""Exception types shared across the toolkit."""


class MsHestonError(Exception):
    """Base class for all toolkit errors."""


class NearSingular(MsHestonError):
    """A kernel denominator fell below its relative floor at some contour point."""

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k


class BranchCrossing(MsHestonError):
    """The rotation-safe log argument landed exactly on the negative real axis.

    Diagnostic only: under the principal-branch square root this is not
    expected to occur for admissible parameters.
    """


class ContourViolation(MsHestonError):
    """The contour's imaginary offset is outside the payoff transform's strip."""


class NonConvergence(MsHestonError):
    """Adaptive quadrature exhausted its subdivision budget.

    Carries the best available estimate and its error bound so callers can
    degrade gracefully instead of losing the work.
    """

    def __init__(self, message, estimate=None, error_bound=None):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound


class OutOfBand(MsHestonError):
    """A price violates its no-arbitrage band; ``bound`` is 'lower' or 'upper'."""

    def __init__(self, message, bound):
        super().__init__(message)
        self.bound = bound


class NotCentered(MsHestonError):
    """A Poisson-equation source term has a nonzero Gaussian average."""


class NotPositiveDefinite(MsHestonError):
    """The Brownian correlation matrix is not positive definite."""


class StepExplosion(MsHestonError):
    """A simulated state became non-finite; carries the path index and step."""

    def __init__(self, message, path_index, step):
        super().__init__(message)
        self.path_index = path_index
        self.step = step


class ParseError(MsHestonError):
    """A chain CSV row failed validation; carries the 1-based line number."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyAfterFilter(MsHestonError):
    """Every chain row was rejected by the data filters."""


class NonFinite(MsHestonError):
    """An objective or parameter vector evaluated to a non-finite value."""
