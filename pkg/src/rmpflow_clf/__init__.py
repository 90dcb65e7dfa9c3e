"""RMPflow policy trees with CLF-constrained leaf controllers."""

from .errors import ConfigError, NumericalError, RmpError, SingularityError, StructureError
from .rmp import (
    TAU_SVD,
    NodeState,
    RmpCanonical,
    RmpNatural,
    RmpTree,
    evaluate,
    evaluate_policy,
    pullback,
    pushforward,
    resolve,
)
from .scenarios import build_scenario, scenario_formation, scenario_goal_reach_2d, scenario_multi_robot
from .simulation import SimConfig, Trajectory, count_crossings, path_length, simulate, time_to_goal

__version__ = "0.1.0"
