import pytest

from RobotTrackingBench.faults import NOISELESS
from RobotTrackingBench.planner import Waypoint, build_trajectory
from RobotTrackingBench.simulation import Scenario


LINE_WAYPOINTS = (Waypoint(0.0, 0.0, 0.0), Waypoint(20.0, 0.0, 20.0))

LOOP_WAYPOINTS = (
    Waypoint(0.0, 0.0, 0.0),
    Waypoint(3.0, 2.5, 8.0),
    Waypoint(6.0, 0.0, 16.0),
    Waypoint(3.0, -2.5, 24.0),
    Waypoint(0.0, 0.0, 32.0),
)


@pytest.fixture
def line_trajectory():
    return build_trajectory(LINE_WAYPOINTS, rolling_start=True)


@pytest.fixture
def loop_trajectory():
    return build_trajectory(LOOP_WAYPOINTS)


@pytest.fixture
def line_scenario():
    """Short noiseless straight-line run on the kinematic plant."""
    return Scenario(
        name="line",
        waypoints=LINE_WAYPOINTS,
        rolling_start=True,
        plant="kinematic",
        noise=NOISELESS,
        duration_s=20.0,
        seed=1,
    )


@pytest.fixture
def short_dynamic_scenario():
    """Two-second run on the motor plant with default noise."""
    return Scenario(
        name="short",
        waypoints=(Waypoint(0.0, 0.0, 0.0), Waypoint(2.0, 0.0, 2.0)),
        rolling_start=True,
        seed=3,
    )
