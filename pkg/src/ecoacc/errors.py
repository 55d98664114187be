"""Exception types raised across the package."""


class EcoAccError(Exception):
    """Base class for package errors."""


class TorqueBoundsError(EcoAccError, ValueError):
    """Wheel torque outside the vehicle's admissible range."""


class StepInfeasibleError(EcoAccError, ValueError):
    """A spatial step would drive the velocity to zero or below."""


class NoFeasiblePlanError(EcoAccError):
    """The DP start node has infinite value."""


class EmptyDistributionError(EcoAccError, ValueError):
    pass


class TrafficCollisionError(EcoAccError):
    """A traffic vehicle closed its gap to zero."""


class TraceInvariantError(EcoAccError):
    """The simulated trace broke a well-formedness or safety invariant."""
