"""Global couplings on Poisson point processes and innovation reconstruction."""

__version__ = "0.1.0"

from .errors import (
    DomainError,
    EngineError,
    InadmissiblePathError,
    InsufficientReplicasError,
    SearchFailureError,
    UnsupportedModelError,
)
from .measure import (
    Density,
    DiscreteSpace,
    IntervalSpace,
    Region,
    constant_density,
    discrete_density,
    influence_check_h,
    interval_density,
    subgraph_measures,
    tv_distance,
)
from .race import (
    RaceSource,
    race_coincidence_exact,
    race_coincidence_mc,
    race_lower_bound,
    race_sample,
    race_tv,
)
from .ppp import (
    FirstPoint,
    PointProcessSource,
    SplicedSource,
    first_point_in,
    joint_first_points,
    points_in_window,
    splice,
)
from .coupler import CoupledSample, coincidence_curve, couple

__all__ = [name for name in dir() if not name.startswith("_")]
