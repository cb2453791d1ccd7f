from .controllers import CONTROLLER_IDS, make_controller
from .evaluation import compute_metrics, rank_controllers
from .planner import Waypoint, build_trajectory
from .scenario import load_bundled, parse_scenario
from .simulation import Scenario, SimTrace, run_batch, run_scenario

__all__ = [
    "CONTROLLER_IDS",
    "Scenario",
    "SimTrace",
    "Waypoint",
    "build_trajectory",
    "compute_metrics",
    "load_bundled",
    "make_controller",
    "parse_scenario",
    "rank_controllers",
    "run_batch",
    "run_scenario",
]
