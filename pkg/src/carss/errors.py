"""Exception hierarchy shared across the package."""


class CarssError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(CarssError):
    """Points violate a geometric precondition (off-sphere, bad radius)."""


class DomainError(CarssError):
    """Source placed outside the physical domain of the forward model."""


class NumericalError(CarssError):
    """A numerical procedure failed to converge or produced non-finite values."""


class ContractError(CarssError):
    """Arguments violate an interface contract (shape, range, missing file)."""


class SolverError(CarssError):
    """An inverse solver failed; carries diagnostic context when available."""

    def __init__(self, message, estimate=None, condition=None):
        super().__init__(message)
        self.estimate = estimate
        self.condition = condition


class NoPeaksError(CarssError):
    """Measurement has no usable peaks; reduction cannot proceed."""


class ConfigError(CarssError):
    """Run configuration is inconsistent or does not match the geometry."""
