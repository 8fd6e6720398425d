"""Exception hierarchy shared across the package."""


class GMError(Exception):
    """Base class for all genmatch errors."""


class DomainError(GMError, ValueError):
    """An argument lies outside the domain of an operation."""


class ShapeError(GMError, ValueError):
    """Array shapes or state signatures do not match."""


class SingularityError(GMError, ValueError):
    """Evaluation too close to a (1 - kappa) or (1 - t) singularity."""


class EmptyPosteriorError(GMError):
    """Every data point has zero likelihood at the query state."""


class ContractError(GMError, ValueError):
    """Combinator weights violate their constraints."""


class UnsupportedError(GMError, NotImplementedError):
    """The requested operation is not defined for this input."""


class StepSizeError(GMError, ValueError):
    """Step too large: the one-step transition has negative mass."""

    def __init__(self, message, suggested_h=None):
        super().__init__(message)
        self.suggested_h = suggested_h


class CoverageError(GMError):
    """A quadrature grid does not cover the effective support."""


class InstabilityError(GMError):
    """An ODE integration produced invalid probabilities."""


class DivergenceError(GMError):
    """Training produced a non-finite loss."""

    def __init__(self, message, checkpoint=None, step=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step


class ConfigError(GMError, ValueError):
    """An experiment configuration is invalid."""
