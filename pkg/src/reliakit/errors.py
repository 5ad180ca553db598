"""Exception taxonomy shared across the package."""


class DomainError(ValueError):
    """A point lies outside the support of a probabilistic model."""


class ModelError(ValueError):
    """An invalid or inconsistent model definition."""


class FitError(RuntimeError):
    """A surrogate fit failed (rank deficiency, ill conditioning, ...)."""


class ConditioningError(RuntimeError):
    """A linear-algebra factorization failed beyond recoverable regularization."""


class IterationError(RuntimeError):
    """An iterative search did not converge within its iteration budget.

    Carries the last iterate so callers can inspect or restart.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class EstimatorError(RuntimeError):
    """An estimator hit an undefined configuration (e.g. zero instrumental density)."""


class SamplerError(RuntimeError):
    """An MCMC sampler could not locate or explore the target support."""


class MarginCollapsed(Exception):
    """Signal: the surrogate margin of uncertainty has vanished.

    Raised by margin-based enrichment when no candidate has appreciable
    probability of lying in the margin; adaptive loops treat it as a
    convergence signal rather than a failure.
    """
