"""Multi-objective actor-critic steered toward a convex target set."""
from ._jit import backend
from .driver import RunConfig, RunTrace, run
from .game import ClimateEnv, RecurrenceSpec, TabularGame, load_tabular, verification_game
from .geometry import TargetSet, distance, project, steering_direction

__version__ = "0.1.0"

__all__ = [
    "ClimateEnv",
    "RecurrenceSpec",
    "RunConfig",
    "RunTrace",
    "TabularGame",
    "TargetSet",
    "backend",
    "distance",
    "load_tabular",
    "project",
    "run",
    "steering_direction",
    "verification_game",
]
