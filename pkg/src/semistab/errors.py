"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid grid, bundle or run configuration."""


class SolvabilityError(ValueError):
    """A linear problem violates its solvability condition."""


class StateError(ValueError):
    """A Hermitian state is not usable (non-Hermitian or non-positive)."""


class DomainError(ValueError):
    """A matrix function was evaluated outside its domain."""


class UnsupportedError(NotImplementedError):
    """The requested construction is outside the supported range."""


class SweepError(RuntimeError):
    """The continuity sweep could not start."""
