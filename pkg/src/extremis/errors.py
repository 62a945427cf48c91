"""Exception types shared across the package."""


class ExtremisError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ExtremisError):
    """Invalid configuration value.

    Carries the dotted path of the offending field so callers (and the
    CLI) can report exactly what to fix.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(ExtremisError):
    """Input outside the mathematical domain of an operation."""


class SimulatorFailure(ExtremisError):
    """The synthetic simulator failed for a seed (emulated crash)."""


class InsufficientSamplesError(ExtremisError):
    """Too few Monte Carlo samples for the requested probability level."""


class DegenerateContourError(ExtremisError):
    """Contour construction collapsed (e.g. all samples identical)."""


class EmptyContourError(ExtremisError):
    """Cropping removed every contour point."""


class FitError(ExtremisError):
    """Parameter estimation failed."""


class DegenerateSampleError(FitError):
    """Sample has no spread; the family cannot be fitted."""


class NonConvergenceError(FitError):
    """Optimizer failed to reach the required gradient tolerance."""


class PathologicalChainError(FitError):
    """MCMC acceptance rate outside the usable range."""


class BudgetExceededError(FitError):
    """Iterative estimation hit its draw budget before converging."""


class NarxError(ExtremisError):
    """NARX model construction or evaluation failure."""


class NarxRankError(NarxError):
    """Regression matrix is rank deficient and no ridge penalty was set."""


class NarxDivergenceError(NarxError):
    """Free-running prediction left the plausible range."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"prediction diverged at step {index}")


class MissingDependencyError(NarxError):
    """A manifold stage references a channel that does not exist yet."""


class IncompatibleRunsError(ExtremisError):
    """Refusing to compare runs with different env/simulator settings."""
