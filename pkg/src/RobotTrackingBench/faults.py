"""Wheel fault schedules, effective radii, faulty actuation and the measurement channel.

Flat tires are sensor faults: the odometry integrates the true wheel rotations
with the deflated radius. Shaft bumps and slippage are actuator faults: they
change the wheel speed actually realized and leave the measurements alone.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .vehicle import (
    DEFAULT_ROBOT, Pose, RobotParams, RobotState, WheelSpeeds, wheels_to_body
)

logger = logging.getLogger(__name__)

FLAT_RADIUS_LOSS_M = 0.04
FLAT_DECAY_TAU_S = 5.0
BUMP_AMPLITUDE_M = 0.015
SLIP_FACTOR = 0.8

POSE_NOISE_STD_M = 0.005
HEADING_NOISE_STD_RAD = math.radians(0.2)
WHEEL_SPEED_NOISE_STD = 0.01


class InvalidFaultError(ValueError):
    """Raised when a fault event or its effect is physically impossible."""


class FaultKind(enum.Enum):
    FLAT_LEFT = "FlatLeft"
    FLAT_RIGHT = "FlatRight"
    BUMP_LEFT = "BumpLeft"
    BUMP_RIGHT = "BumpRight"
    SLIPPAGE = "Slippage"
    FAULT_FREE = "FaultFree"


_DEFAULT_AMPLITUDE = {
    FaultKind.FLAT_LEFT: FLAT_RADIUS_LOSS_M,
    FaultKind.FLAT_RIGHT: FLAT_RADIUS_LOSS_M,
    FaultKind.BUMP_LEFT: BUMP_AMPLITUDE_M,
    FaultKind.BUMP_RIGHT: BUMP_AMPLITUDE_M,
    FaultKind.SLIPPAGE: SLIP_FACTOR,
}
FLAT_KINDS = (FaultKind.FLAT_LEFT, FaultKind.FLAT_RIGHT)
BUMP_KINDS = (FaultKind.BUMP_LEFT, FaultKind.BUMP_RIGHT)
RIGHT_KINDS = (FaultKind.FLAT_RIGHT, FaultKind.BUMP_RIGHT)


@dataclass(frozen=True)
class FaultEvent:
    """One fault active on [t_start, t_end).

    Attributes:
        kind: Fault type
        t_start: Injection time in seconds
        t_end: Removal time, infinite for a permanent fault
        amplitude: Radius loss for flats, lift for bumps (meters) or
            realized-speed factor in (0, 1] for slippage
        period_s: Bumps only; makes the bump periodic in time instead of
            locked to the wheel angle
        decay_tau_s: Flats only; time constant of the radius decay
    """

    kind: FaultKind
    t_start: float
    t_end: float = math.inf
    amplitude: Optional[float] = None
    period_s: Optional[float] = None
    decay_tau_s: float = FLAT_DECAY_TAU_S

    def __post_init__(self) -> None:
        if self.kind is FaultKind.FAULT_FREE:
            raise InvalidFaultError("FaultFree cannot be scheduled as an event")
        if self.amplitude is None:
            object.__setattr__(self, "amplitude", _DEFAULT_AMPLITUDE[self.kind])
        if not (math.isfinite(self.t_start) and self.t_start >= 0):
            raise InvalidFaultError(f"t_start must be finite and >= 0, got {self.t_start}")
        if not self.t_end > self.t_start:
            raise InvalidFaultError(
                f"t_end must exceed t_start, got [{self.t_start}, {self.t_end})"
            )
        if self.kind is FaultKind.SLIPPAGE:
            if not 0 < self.amplitude <= 1:
                raise InvalidFaultError(
                    f"slippage factor must lie in (0, 1], got {self.amplitude}"
                )
        elif not (math.isfinite(self.amplitude) and self.amplitude >= 0):
            raise InvalidFaultError(
                f"{self.kind.value} amplitude must be finite and >= 0, got {self.amplitude}"
            )
        if self.period_s is not None:
            if self.kind not in BUMP_KINDS:
                raise InvalidFaultError(f"period_s only applies to bumps, not {self.kind.value}")
            if not self.period_s > 0:
                raise InvalidFaultError(f"period_s must be > 0, got {self.period_s}")
        if not self.decay_tau_s > 0:
            raise InvalidFaultError(f"decay_tau_s must be > 0, got {self.decay_tau_s}")

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end

    @property
    def right_wheel(self) -> bool:
        return self.kind in RIGHT_KINDS

    def radius_loss(self, t: float) -> float:
        """Flat radius loss at t, rising from 0 to the amplitude."""
        return self.amplitude * (1.0 - math.exp(-(t - self.t_start) / self.decay_tau_s))

    def bump_lift(self, t: float, wheel_angle: float) -> float:
        """Half-rectified sinusoidal radius lift of a bump."""
        if self.period_s is not None:
            phase = 2.0 * math.pi * (t - self.t_start) / self.period_s
        else:
            phase = wheel_angle
        return self.amplitude * max(0.0, math.sin(phase))


@dataclass(frozen=True)
class FaultSchedule:
    """Fault events ordered by start time."""

    events: Tuple[FaultEvent, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "events", tuple(sorted(self.events, key=lambda e: e.t_start))
        )

    def active_events(self, t: float) -> Tuple[FaultEvent, ...]:
        return tuple(e for e in self.events if e.active(t))

    def active_kinds(self, t: float) -> Tuple[FaultKind, ...]:
        return tuple(e.kind for e in self.active_events(t))

    def label(self, t: float) -> str:
        """Active fault names joined by '+', or FaultFree."""
        kinds = self.active_kinds(t)
        if not kinds:
            return FaultKind.FAULT_FREE.value
        return "+".join(k.value for k in kinds)

    def check_radii(self, nominal_radius: float) -> None:
        """Reject flats that would deflate a wheel to a non-positive radius.

        Raises:
            InvalidFaultError: If the summed flat losses of a wheel reach the nominal radius
        """
        for right in (True, False):
            loss = sum(e.amplitude for e in self.events
                       if e.kind in FLAT_KINDS and e.right_wheel == right)
            if loss >= nominal_radius:
                side = "right" if right else "left"
                raise InvalidFaultError(
                    f"flat losses of {loss} m leave no {side} radius (nominal {nominal_radius} m)"
                )


NO_FAULTS = FaultSchedule()


def flat_radii(
    schedule: FaultSchedule, t: float, nominal_radius: float = DEFAULT_ROBOT.wheel_radius
) -> Tuple[float, float]:
    """Deflated (right, left) radii seen by the odometry."""
    radii = [nominal_radius, nominal_radius]
    for event in schedule.active_events(t):
        if event.kind in FLAT_KINDS:
            radii[0 if event.right_wheel else 1] -= event.radius_loss(t)
    return radii[0], radii[1]


def _bump_lifts(
    schedule: FaultSchedule, t: float, angle_right: float, angle_left: float
) -> Tuple[float, float]:
    lifts = [0.0, 0.0]
    for event in schedule.active_events(t):
        if event.kind in BUMP_KINDS:
            if event.right_wheel:
                lifts[0] += event.bump_lift(t, angle_right)
            else:
                lifts[1] += event.bump_lift(t, angle_left)
    return lifts[0], lifts[1]


def slip_factor(schedule: FaultSchedule, t: float) -> float:
    factor = 1.0
    for event in schedule.active_events(t):
        if event.kind is FaultKind.SLIPPAGE:
            factor *= event.amplitude
    return factor


def effective_radii(
    schedule: FaultSchedule,
    t: float,
    wheel_angle_right: float,
    wheel_angle_left: float,
    nominal_radius: float = DEFAULT_ROBOT.wheel_radius,
) -> Tuple[float, float, float]:
    """Combined wheel radii and slip factor at time t.

    Flats set the base radius, bumps add to it and slippage multiplies the
    realized speed, so the composition does not depend on event order.

    Returns:
        Tuple of (r_right, r_left, slip_factor)

    Raises:
        InvalidFaultError: If a resulting radius is not positive
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    base_right, base_left = flat_radii(schedule, t, nominal_radius)
    lift_right, lift_left = _bump_lifts(schedule, t, wheel_angle_right, wheel_angle_left)
    r_right, r_left = base_right + lift_right, base_left + lift_left
    if not (r_right > 0 and r_left > 0):
        raise InvalidFaultError(
            f"effective radius must stay > 0, got right={r_right}, left={r_left} at t={t}"
        )
    return r_right, r_left, slip_factor(schedule, t)


def apply_actuation(
    cmd: WheelSpeeds,
    schedule: FaultSchedule,
    t: float,
    wheel_angles: Tuple[float, float],
    nominal_radius: float = DEFAULT_ROBOT.wheel_radius,
) -> WheelSpeeds:
    """Wheel speeds realized at the nominal radius under bumps and slippage."""
    lift_right, lift_left = _bump_lifts(schedule, t, *wheel_angles)
    slip = slip_factor(schedule, t)
    return WheelSpeeds(
        right=cmd.right * (nominal_radius + lift_right) / nominal_radius * slip,
        left=cmd.left * (nominal_radius + lift_left) / nominal_radius * slip,
    )


#########################################################
# Measurement channel
#########################################################

@dataclass(frozen=True)
class NoiseConfig:
    """Standard deviations of the Gaussian measurement noise."""

    pose_std_m: float = POSE_NOISE_STD_M
    heading_std_rad: float = HEADING_NOISE_STD_RAD
    wheel_speed_std: float = WHEEL_SPEED_NOISE_STD

    def __post_init__(self) -> None:
        for name in ("pose_std_m", "heading_std_rad", "wheel_speed_std"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @property
    def scales(self) -> np.ndarray:
        """Per-draw scales: x, y, heading, right wheel, left wheel."""
        return np.array([self.pose_std_m, self.pose_std_m, self.heading_std_rad,
                         self.wheel_speed_std, self.wheel_speed_std])


NOISELESS = NoiseConfig(0.0, 0.0, 0.0)


def odometry_velocity_bias(
    truth: RobotState,
    schedule: FaultSchedule,
    t: float,
    params: RobotParams = DEFAULT_ROBOT,
) -> Tuple[float, float]:
    """Odometry (v, omega) error from flat radii applied to the true wheel rotation."""
    r_right, r_left = flat_radii(schedule, t, params.wheel_radius)
    if r_right == r_left == params.wheel_radius:
        return 0.0, 0.0
    v_m, omega_m = wheels_to_body(truth.wheels, params, r_right, r_left)
    v, omega = wheels_to_body(truth.wheels, params)
    return v_m - v, omega_m - omega


def corrupt_measurement(
    truth: RobotState,
    schedule: FaultSchedule,
    t: float,
    rng_seed: Union[int, np.random.Generator],
    *,
    noise: NoiseConfig = NoiseConfig(),
    params: RobotParams = DEFAULT_ROBOT,
    odometry_bias: Sequence[float] = (0.0, 0.0, 0.0),
    encoders: Optional[WheelSpeeds] = None,
) -> RobotState:
    """Measured state: truth plus odometry bias plus Gaussian noise.

    Flat tires in the schedule bias the measured (v, omega); actuator faults
    never reach the measurement. Exactly five standard normal values are
    drawn per call, whatever the noise levels, so the stream stays aligned
    across configurations.

    Args:
        truth: True robot state
        schedule: Fault timeline
        t: Simulation time in seconds
        rng_seed: Seed, or a seeded generator owned by the caller
        noise: Noise standard deviations
        params: Robot geometry
        odometry_bias: Integrated (x, y, phi) odometry error
        encoders: Encoder wheel speeds, defaults to the true wheel speeds

    Returns:
        Measured RobotState; its wheels hold the noisy encoder readings
    """
    rng = np.random.default_rng(rng_seed)
    draws = rng.standard_normal(5) * noise.scales
    dv, domega = odometry_velocity_bias(truth, schedule, t, params)
    pose = truth.pose
    wheels = truth.wheels if encoders is None else encoders
    return RobotState(
        pose=Pose(
            pose.x + odometry_bias[0] + draws[0],
            pose.y + odometry_bias[1] + draws[1],
            pose.phi + odometry_bias[2] + draws[2],
        ),
        v=truth.v + dv,
        omega=truth.omega + domega,
        wheels=WheelSpeeds(wheels.right + draws[3], wheels.left + draws[4]),
    )


class MeasurementChannel:
    """Odometry-bias integrator plus a seeded noise source for one simulation."""

    def __init__(
        self,
        *,
        schedule: FaultSchedule = NO_FAULTS,
        noise: NoiseConfig = NoiseConfig(),
        seed: int = 0,
        params: RobotParams = DEFAULT_ROBOT,
    ) -> None:
        self.schedule = schedule
        self.noise = noise
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.bias = np.zeros(3)

    def velocity_bias(self, truth: RobotState, t: float) -> Tuple[float, float]:
        return odometry_velocity_bias(truth, self.schedule, t, self.params)

    def integrate(self, truth: RobotState, t: float, dt: float) -> None:
        """Accumulate the odometry error over one plant step."""
        dv, domega = self.velocity_bias(truth, t)
        if dv == 0.0 and domega == 0.0 and not self.bias.any():
            return
        phi = truth.pose.phi
        phi_m = phi + self.bias[2]
        v = truth.v
        self.bias += dt * np.array([
            (v + dv) * math.cos(phi_m) - v * math.cos(phi),
            (v + dv) * math.sin(phi_m) - v * math.sin(phi),
            domega,
        ])

    def observe(self, truth: RobotState, t: float,
                encoders: Optional[WheelSpeeds] = None) -> RobotState:
        """Draw the measured state for the current outer step."""
        return corrupt_measurement(truth, self.schedule, t, self.rng, noise=self.noise,
                                   params=self.params, odometry_bias=self.bias,
                                   encoders=encoders)


def describe_schedule(events: Iterable[FaultEvent]) -> str:
    parts = []
    for e in events:
        end = "inf" if math.isinf(e.t_end) else f"{e.t_end:g}"
        parts.append(f"{e.kind.value}[{e.t_start:g},{end})")
    return ", ".join(parts) if parts else FaultKind.FAULT_FREE.value
