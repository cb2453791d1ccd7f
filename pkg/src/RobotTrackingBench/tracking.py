"""Error frame, command types and helpers shared by the tracking controllers."""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

from .planner import ReferenceSample
from .vehicle import (
    DEFAULT_ROBOT, Pose, RobotParams, RobotState, WheelSpeeds, body_to_wheels,
    wrap_angle
)

logger = logging.getLogger(__name__)

RATE_FILTER_CUTOFF_HZ = 20.0
EPS_DENOMINATOR = 1e-3


@dataclass(frozen=True)
class TrackingError:
    """Tracking error in the reference frame and its time derivatives."""

    x_e: float
    y_e: float
    phi_e: float
    dx_e: float = 0.0
    dy_e: float = 0.0
    dphi_e: float = 0.0


@dataclass(frozen=True)
class ControlCommand:
    """Outer-loop output handed to the inner loop.

    Attributes:
        v_c: Commanded linear velocity
        dv_c: Commanded linear acceleration
        omega_c: Commanded angular velocity
        wheel_setpoints: Wheel angular velocity setpoints for (v_c, omega_c)
        flags: Numerical guard events raised while computing the command
    """

    v_c: float
    dv_c: float
    omega_c: float
    wheel_setpoints: WheelSpeeds
    flags: Tuple[str, ...] = ()


def make_command(
    v_c: float,
    dv_c: float,
    omega_c: float,
    params: RobotParams,
    flags: Sequence[str] = (),
) -> ControlCommand:
    """Build a command whose wheel setpoints match (v_c, omega_c)."""
    return ControlCommand(
        v_c=v_c, dv_c=dv_c, omega_c=omega_c,
        wheel_setpoints=body_to_wheels(v_c, omega_c, params),
        flags=tuple(flags),
    )


def sgn(z: float) -> float:
    """Sign function with sgn(0) = 0."""
    if z > 0:
        return 1.0
    if z < 0:
        return -1.0
    return 0.0


def sat(z: float, width: float) -> float:
    """Boundary-layer replacement of sgn: clamp(z / width, -1, 1)."""
    if not width > 0:
        raise ValueError(f"saturation width must be > 0, got {width}")
    return max(-1.0, min(1.0, z / width))


def guard_denominator(value: float, eps: float = EPS_DENOMINATOR) -> Tuple[float, bool]:
    """Clamp a denominator away from zero, keeping its sign.

    Returns:
        Tuple of (safe denominator, whether it was clamped)
    """
    if abs(value) >= eps:
        return value, False
    logger.debug("denominator %g clamped to +-%g", value, eps)
    return (eps if value >= 0 else -eps), True


def tracking_error(actual: Pose, desired: ReferenceSample) -> Tuple[float, float, float]:
    """Rotate the world-frame pose difference into the reference frame.

    Args:
        actual: Robot pose
        desired: Reference sample holding the virtual robot pose

    Returns:
        Tuple of (x_e, y_e, phi_e) with phi_e in (-pi, pi]
    """
    dx = actual.x - desired.x
    dy = actual.y - desired.y
    c, s = math.cos(desired.phi), math.sin(desired.phi)
    return c * dx + s * dy, -s * dx + c * dy, wrap_angle(actual.phi - desired.phi)


def tracking_error_rates(
    err: Tuple[float, float, float],
    v_r: float,
    omega_r: float,
    v_d: float,
    omega_d: float,
) -> Tuple[float, float, float]:
    """Time derivatives of the tracking error for the given velocities."""
    x_e, y_e, phi_e = err
    dx_e = -v_d + v_r * math.cos(phi_e) + y_e * omega_d
    dy_e = v_r * math.sin(phi_e) - x_e * omega_d
    return dx_e, dy_e, omega_r - omega_d


def measure_tracking(state: RobotState, ref: ReferenceSample) -> TrackingError:
    """Tracking error and rates of a robot state against a reference sample."""
    err = tracking_error(state.pose, ref)
    rates = tracking_error_rates(err, state.v, state.omega, ref.v, ref.omega)
    return TrackingError(*err, *rates)


class RateFilter:
    """First-order low-pass filtered finite difference."""

    def __init__(self, *, cutoff_hz: float = RATE_FILTER_CUTOFF_HZ,
                 angular: bool = False) -> None:
        self.cutoff_hz = cutoff_hz
        self.angular = angular
        self.rate = 0.0
        self._last: Optional[float] = None

    def update(self, value: float, dt: float) -> float:
        """Feed a new sample and return the filtered rate.

        The first sample only primes the filter and yields a zero rate.
        """
        if self._last is None:
            self._last = value
            return self.rate
        diff = value - self._last
        if self.angular:
            diff = wrap_angle(diff)
        self._last = value
        alpha = dt / (dt + 1.0 / (2.0 * math.pi * self.cutoff_hz))
        self.rate += alpha * (diff / dt - self.rate)
        return self.rate

    def reset(self) -> None:
        self.rate = 0.0
        self._last = None

    def __repr__(self) -> str:
        return f"RateFilter(cutoff_hz={self.cutoff_hz}, rate={self.rate:.6g})"


class Controller:
    """Base class of the outer-loop tracking controllers.

    A controller maps the fed-back robot state and a window of reference
    samples (window[0] is the current one) to a ControlCommand. Instances
    carry their own memory and belong to exactly one simulation.
    """

    name = "BASE"
    horizon_steps = 0

    def __init__(self, *, params: RobotParams = DEFAULT_ROBOT) -> None:
        self.params = params

    def reset(self) -> None:
        """Forget all internal memory."""

    def compute(self, state: RobotState, window: Sequence[ReferenceSample],
                dt: float) -> ControlCommand:
        raise NotImplementedError

    def describe(self) -> Dict[str, Any]:
        """Gain set recorded in trace headers."""
        return {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.describe()})"
