"""Differential-drive kinematics, wheel-space dynamics and DC motor plant models."""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

WHEEL_RADIUS_M = 0.30
HALF_TRACK_M = 0.25
COM_OFFSET_M = 0.05
BODY_MASS_KG = 30.0
WHEEL_MASS_KG = 1.0
BODY_INERTIA = 1.0
WHEEL_INERTIA = 0.005

MOTOR_INDUCTANCE_H = 0.01
MOTOR_RESISTANCE_OHM = 1.0
MOTOR_TORQUE_CONSTANT = 0.015
MOTOR_SHAFT_INERTIA = 0.003
MOTOR_GEAR_RATIO = 1.0

# Longest RK4 sub-step used by kinematic_step
MAX_KINEMATIC_SUBSTEP_S = 0.01
# The full motor model needs dt <= L / (STIFFNESS_FACTOR * R)
STIFFNESS_FACTOR = 10.0


class InvalidStateError(ValueError):
    """Raised when a state or an input holds non-finite values."""


class StiffnessError(ValueError):
    """Raised when a step is too long for the electrical time constant."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi].

    Args:
        angle: Angle in radians

    Returns:
        Equivalent angle in (-pi, pi]
    """
    if -math.pi < angle <= math.pi:
        return angle
    wrapped = math.pi - (math.pi - angle) % (2.0 * math.pi)
    return wrapped if wrapped > -math.pi else wrapped + 2.0 * math.pi


def rk4_step(
    f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float
) -> np.ndarray:
    """Advance y' = f(t, y) by one classic Runge-Kutta step of length h."""
    k1 = f(t, y)
    k2 = f(t + h / 2, y + k1 * h / 2)
    k3 = f(t + h / 2, y + k2 * h / 2)
    k4 = f(t + h, y + k3 * h)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise InvalidStateError(f"{name} must be finite, got {value}")


@dataclass(frozen=True)
class RobotParams:
    """Geometry and inertia of the differential-drive robot.

    Attributes:
        wheel_radius: Driving wheel radius r in meters
        half_track: Half the distance between the driving wheels, b, in meters
        com_offset: Distance d from the wheel axle to the center of mass
        body_mass: Body mass m_c in kg
        wheel_mass: Mass m_w of one driving wheel with its motor in kg
        body_inertia: Body moment of inertia I about the vertical axis
        wheel_inertia: Wheel moment of inertia I_w about its axle
    """

    wheel_radius: float = WHEEL_RADIUS_M
    half_track: float = HALF_TRACK_M
    com_offset: float = COM_OFFSET_M
    body_mass: float = BODY_MASS_KG
    wheel_mass: float = WHEEL_MASS_KG
    body_inertia: float = BODY_INERTIA
    wheel_inertia: float = WHEEL_INERTIA

    def __post_init__(self) -> None:
        for name in ("wheel_radius", "half_track", "body_mass", "wheel_mass",
                     "body_inertia", "wheel_inertia"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be > 0, got {value}")
        if not math.isfinite(self.com_offset):
            raise ValueError(f"com_offset must be finite, got {self.com_offset}")

    @property
    def total_mass(self) -> float:
        """Total mass m = m_c + 2 m_w."""
        return self.body_mass + 2.0 * self.wheel_mass


@dataclass(frozen=True)
class Pose:
    """Planar configuration with heading kept in (-pi, pi]."""

    x: float
    y: float
    phi: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "phi", wrap_angle(self.phi))


@dataclass(frozen=True)
class WheelSpeeds:
    """Angular velocities of the right and left driving wheels in rad/s."""

    right: float
    left: float


@dataclass(frozen=True)
class RobotState:
    """Pose plus body and wheel velocities."""

    pose: Pose
    v: float = 0.0
    omega: float = 0.0
    wheels: WheelSpeeds = WheelSpeeds(0.0, 0.0)


@dataclass(frozen=True)
class MotorParams:
    """Armature-controlled DC motor constants.

    The inductance is the small parameter of the singularly perturbed
    motor model. The gear ratio is only used by the rigid-body plant.
    """

    inductance: float = MOTOR_INDUCTANCE_H
    resistance: float = MOTOR_RESISTANCE_OHM
    torque_constant: float = MOTOR_TORQUE_CONSTANT
    shaft_inertia: float = MOTOR_SHAFT_INERTIA
    gear_ratio: float = MOTOR_GEAR_RATIO

    def __post_init__(self) -> None:
        for name in ("inductance", "resistance", "torque_constant",
                     "shaft_inertia", "gear_ratio"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be > 0, got {value}")

    @property
    def mechanical_time_constant(self) -> float:
        """Time constant J R / k^2 of the reduced motor model."""
        return self.shaft_inertia * self.resistance / self.torque_constant ** 2

    @property
    def max_full_step(self) -> float:
        """Longest step admitted by motor_step_full."""
        return self.inductance / (STIFFNESS_FACTOR * self.resistance)


@dataclass(frozen=True)
class MotorState:
    """Shaft speed in rad/s and armature current in A."""

    speed: float = 0.0
    current: float = 0.0


DEFAULT_ROBOT = RobotParams()
DEFAULT_MOTOR = MotorParams()


#########################################################
# Kinematics
#########################################################

def body_to_wheels(v: float, omega: float, params: RobotParams) -> WheelSpeeds:
    """Convert body velocities to wheel angular velocity setpoints.

    Args:
        v: Linear velocity in m/s
        omega: Angular velocity in rad/s
        params: Robot geometry

    Returns:
        WheelSpeeds with right = (v + b w) / r and left = (v - b w) / r

    Raises:
        InvalidStateError: If an input is not finite
    """
    _require_finite(v=v, omega=omega)
    r, b = params.wheel_radius, params.half_track
    return WheelSpeeds(right=(v + b * omega) / r, left=(v - b * omega) / r)


def wheels_to_body(
    wheels: WheelSpeeds,
    params: RobotParams,
    r_right: Optional[float] = None,
    r_left: Optional[float] = None,
) -> Tuple[float, float]:
    """Convert wheel angular velocities to body velocities.

    Each wheel may roll on its own effective radius, which is how
    wheel faults reach the kinematics.

    Args:
        wheels: Right and left wheel angular velocities
        params: Robot geometry
        r_right: Effective right radius, defaults to the nominal radius
        r_left: Effective left radius, defaults to the nominal radius

    Returns:
        Tuple of (v, omega)

    Raises:
        InvalidStateError: If a wheel speed is not finite
    """
    _require_finite(right=wheels.right, left=wheels.left)
    rr = params.wheel_radius if r_right is None else r_right
    rl = params.wheel_radius if r_left is None else r_left
    right = rr * wheels.right
    left = rl * wheels.left
    return (right + left) / 2.0, (right - left) / (2.0 * params.half_track)


def unicycle_rates(v: float, omega: float) -> Callable[[float, np.ndarray], np.ndarray]:
    """Return the right-hand side of the unicycle model for fixed inputs."""
    def f(_t: float, s: np.ndarray) -> np.ndarray:
        return np.array([v * math.cos(s[2]), v * math.sin(s[2]), omega])
    return f


def kinematic_step(
    state: RobotState,
    cmd_v: float,
    cmd_omega: float,
    dt: float,
    params: RobotParams = DEFAULT_ROBOT,
) -> RobotState:
    """Integrate the unicycle model over dt with constant inputs.

    The step is split into RK4 sub-steps no longer than
    MAX_KINEMATIC_SUBSTEP_S. The returned state carries the commanded
    velocities and the matching wheel speeds.

    Raises:
        ValueError: If dt is not positive
        InvalidStateError: If the pose or the inputs are not finite
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    pose = state.pose
    _require_finite(x=pose.x, y=pose.y, phi=pose.phi, cmd_v=cmd_v, cmd_omega=cmd_omega)

    substeps = max(1, math.ceil(dt / MAX_KINEMATIC_SUBSTEP_S - 1e-9))
    h = dt / substeps
    f = unicycle_rates(cmd_v, cmd_omega)
    s = np.array([pose.x, pose.y, pose.phi])
    for i in range(substeps):
        s = rk4_step(f, i * h, s, h)

    return RobotState(
        pose=Pose(float(s[0]), float(s[1]), float(s[2])),
        v=cmd_v,
        omega=cmd_omega,
        wheels=body_to_wheels(cmd_v, cmd_omega, params),
    )


#########################################################
# DC motor
#########################################################

def motor_step_full(
    state: MotorState, u: float, params: MotorParams, dt: float
) -> MotorState:
    """Integrate J w' = k i, L i' = -k w - R i + u over dt with RK4.

    Raises:
        StiffnessError: If dt exceeds L / (10 R)
        InvalidStateError: If the state or the voltage is not finite
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if dt > params.max_full_step * (1.0 + 1e-9):
        raise StiffnessError(
            f"dt={dt} exceeds the electrical limit {params.max_full_step} "
            f"(L={params.inductance}, R={params.resistance})"
        )
    _require_finite(speed=state.speed, current=state.current, u=u)

    k, J = params.torque_constant, params.shaft_inertia
    L, R = params.inductance, params.resistance

    def f(_t: float, s: np.ndarray) -> np.ndarray:
        return np.array([k * s[1] / J, (-k * s[0] - R * s[1] + u) / L])

    s = rk4_step(f, 0.0, np.array([state.speed, state.current]), dt)
    return MotorState(speed=float(s[0]), current=float(s[1]))


def motor_step_reduced(
    shaft_speed: float, u: float, params: MotorParams, dt: float
) -> float:
    """Integrate the first-order motor J w' = -(k^2/R) w + (k/R) u over dt.

    This is the motor restricted to its slow manifold, i = (u - k w) / R.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    _require_finite(shaft_speed=shaft_speed, u=u)
    k, J, R = params.torque_constant, params.shaft_inertia, params.resistance

    def f(_t: float, s: np.ndarray) -> np.ndarray:
        return np.array([(-(k * k / R) * s[0] + (k / R) * u) / J])

    return float(rk4_step(f, 0.0, np.array([shaft_speed]), dt)[0])


def motor_energy(state: MotorState, params: MotorParams) -> float:
    """Stored energy 1/2 J w^2 + 1/2 L i^2."""
    return 0.5 * (params.shaft_inertia * state.speed ** 2
                  + params.inductance * state.current ** 2)


#########################################################
# Wheel-space rigid-body dynamics
#########################################################

def mass_matrix(params: RobotParams, extra_inertia: float = 0.0) -> np.ndarray:
    """Reduced inertia matrix in wheel coordinates.

    Args:
        params: Robot geometry and inertia
        extra_inertia: Reflected rotor inertia added to each wheel
    """
    r, b = params.wheel_radius, params.half_track
    m, inertia = params.total_mass, params.body_inertia
    c = r * r / (4.0 * b * b)
    diag = c * (m * b * b + inertia) + params.wheel_inertia + extra_inertia
    off = c * (m * b * b - inertia)
    return np.array([[diag, off], [off, diag]])


def coriolis_matrix(params: RobotParams, phi_dot: float) -> np.ndarray:
    """Skew-symmetric centripetal and Coriolis matrix in wheel coordinates."""
    r, b = params.wheel_radius, params.half_track
    c = r * r / (2.0 * b) * params.body_mass * params.com_offset * phi_dot
    return np.array([[0.0, c], [-c, 0.0]])


def wheel_acceleration(
    eta: np.ndarray, torques: np.ndarray, params: RobotParams, extra_inertia: float = 0.0
) -> np.ndarray:
    """Solve M eta' = tau - V(phi') eta for the wheel accelerations."""
    phi_dot = params.wheel_radius * (eta[0] - eta[1]) / (2.0 * params.half_track)
    rhs = torques - coriolis_matrix(params, phi_dot) @ eta
    return np.linalg.solve(mass_matrix(params, extra_inertia), rhs)


def wheel_dynamics_step(
    wheels: WheelSpeeds, torques: Tuple[float, float], params: RobotParams, dt: float
) -> WheelSpeeds:
    """Integrate the wheel-space dynamics under constant wheel torques."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    tau = np.array(torques, dtype=float)

    def f(_t: float, s: np.ndarray) -> np.ndarray:
        return wheel_acceleration(s, tau, params)

    s = rk4_step(f, 0.0, np.array([wheels.right, wheels.left]), dt)
    return WheelSpeeds(right=float(s[0]), left=float(s[1]))


def kinetic_energy(wheels: WheelSpeeds, params: RobotParams) -> float:
    """Kinetic energy 1/2 eta^T M eta of the robot in wheel coordinates."""
    eta = np.array([wheels.right, wheels.left])
    return 0.5 * float(eta @ mass_matrix(params) @ eta)


def rigid_body_step(
    wheels: WheelSpeeds,
    currents: Tuple[float, float],
    voltages: Tuple[float, float],
    robot: RobotParams,
    motor: MotorParams,
    dt: float,
) -> Tuple[WheelSpeeds, Tuple[float, float]]:
    """Integrate wheel dynamics driven by two geared armature circuits.

    Each wheel gets the torque n k i of its motor and each armature obeys
    L i' = -k n W - R i + u, W being the wheel speed. Rotor inertia is
    reflected onto the wheels as J n^2.

    Returns:
        Tuple of (wheel speeds, (right current, left current))

    Raises:
        StiffnessError: If dt exceeds L / (10 R)
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if dt > motor.max_full_step * (1.0 + 1e-9):
        raise StiffnessError(
            f"dt={dt} exceeds the electrical limit {motor.max_full_step}"
        )
    n, k = motor.gear_ratio, motor.torque_constant
    L, R = motor.inductance, motor.resistance
    u = np.array(voltages, dtype=float)
    reflected = motor.shaft_inertia * n * n

    def f(_t: float, s: np.ndarray) -> np.ndarray:
        eta, amps = s[:2], s[2:]
        eta_dot = wheel_acceleration(eta, n * k * amps, robot, reflected)
        amps_dot = (-k * n * eta - R * amps + u) / L
        return np.concatenate([eta_dot, amps_dot])

    s0 = np.array([wheels.right, wheels.left, currents[0], currents[1]])
    s = rk4_step(f, 0.0, s0, dt)
    if not np.all(np.isfinite(s)):
        raise InvalidStateError(f"rigid-body state diverged: {s}")
    return WheelSpeeds(float(s[0]), float(s[1])), (float(s[2]), float(s[3]))
