"""Monte Carlo lab for multiple SLE driven by Dyson Brownian motion."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigInvalid,
    DomainViolation,
    EmptySet,
    GridIntersectsHull,
    InitOrder,
    InvalidGrid,
    MSLEError,
    NonpositiveState,
    OrderingViolation,
    ParamOrder,
    SwallowedPoint,
)
from .loewner import (  # noqa: E402
    DrivingForces,
    HullPolyline,
    MapTrajectory,
    Trace,
    backward_evolve,
    forward_evolve,
    forward_flow,
    roundtrip_check,
    trace_extract,
)
from .metrics import (  # noqa: E402
    CompactGridSpec,
    caratheodory_distance,
    constant_CTG,
    hausdorff_distance,
    koebe_check,
)
from .paths import (  # noqa: E402
    BesselPath,
    DysonPaths,
    NoisePath,
    TimeGrid,
    bessel_step,
    sample_noise,
    simulate_bessel,
    simulate_dyson,
)
