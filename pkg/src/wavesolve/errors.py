"""Exception types shared across the solver.

Exit-code mapping used by the CLI: ConfigurationError -> 1,
runtime/physics errors -> 2, AdaptiveFailureError -> 3.
"""


class WavesolveError(Exception):
    """Base class for all solver errors."""


class ConfigurationError(WavesolveError):
    """Invalid user input: unsupported parameter, malformed config file."""


class ConstructionError(WavesolveError):
    """Basis or operator construction failed (eigen-solve, admissibility)."""


class LatticeError(WavesolveError):
    """Coordinate does not lie on the dyadic lattice."""

    def __init__(self, msg, nearest=None):
        super().__init__(msg)
        self.nearest = nearest


class StencilIncompleteError(WavesolveError):
    """An operator was applied on a set missing required source points."""

    def __init__(self, msg, missing=None):
        super().__init__(msg)
        self.missing = missing if missing is not None else []


class PhysicsEvaluationError(WavesolveError):
    """Non-finite value or inadmissible state produced by a physics model."""


class BlowUpError(PhysicsEvaluationError):
    """Non-finite value during time integration."""


class AdaptiveFailureError(WavesolveError):
    """Grid adaptation could not satisfy its tolerance within limits."""


class ResourceLimitError(WavesolveError):
    """A configured hard budget (point count) was exceeded."""
