"""Exception types raised across the package."""


class MSLEError(Exception):
    """Base class for all package errors."""


class InvalidGrid(MSLEError, ValueError):
    pass


class NonpositiveState(MSLEError, ValueError):
    pass


class ParamOrder(MSLEError, ValueError):
    pass


class InitOrder(MSLEError, ValueError):
    pass


class OrderingViolation(MSLEError, RuntimeError):
    """A Dyson step left the Weyl chamber even after local step halving."""


class SwallowedPoint(MSLEError):
    """A point was absorbed by the hull. Carries the swallow time."""

    def __init__(self, time, z=None):
        self.time = time
        self.z = z
        super().__init__(f"point {z!r} swallowed at t={time:.6g}")


class GridIntersectsHull(MSLEError, ValueError):
    pass


class EmptySet(MSLEError, ValueError):
    pass


class DomainViolation(MSLEError, ValueError):
    pass


class ConfigInvalid(MSLEError, ValueError):
    pass
