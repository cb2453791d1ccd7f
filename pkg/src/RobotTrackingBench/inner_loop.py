"""Singularly perturbed PID wheel-speed loop and its boundary-layer system."""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .antifragile import InvalidGainError
from .vehicle import (
    DEFAULT_MOTOR, MotorParams, MotorState, motor_step_full, motor_step_reduced,
    rk4_step
)

logger = logging.getLogger(__name__)

PID_K1 = 5.0
PID_K2 = 0.5
PID_K3 = 10.0
PID_EPSILON = 0.01
VOLTAGE_LIMIT_V = 24.0
# Bandwidth parameter of the dirty differentiator, in seconds
DERIVATIVE_SIGMA_S = 0.005
MOTOR_MODELS = ("full", "reduced")


def hurwitz_check(k1: float, k2: float) -> bool:
    """True iff both eigenvalues of [[0, 1], [-k1, -k2]] lie in the open left half plane.

    For this companion form the condition is exactly k1 > 0 and k2 > 0.
    """
    return bool(k1 > 0 and k2 > 0)


def companion_matrix(k1: float, k2: float) -> np.ndarray:
    """State matrix of the boundary-layer system."""
    return np.array([[0.0, 1.0], [-k1, -k2]])


@dataclass(frozen=True)
class PIDGains:
    """Inner-loop gains: k1 = K_P, k2 = K_P K_D, k3 = K_P K_I_hat, epsilon the time-scale ratio.

    The law is u = k1 e + k2 e' + epsilon k3 int e dt. A small epsilon
    keeps the integral slow next to the proportional-derivative part.
    """

    k1: float = PID_K1
    k2: float = PID_K2
    k3: float = PID_K3
    epsilon: float = PID_EPSILON
    voltage_limit: float = VOLTAGE_LIMIT_V
    derivative_sigma: float = DERIVATIVE_SIGMA_S

    def __post_init__(self) -> None:
        if not hurwitz_check(self.k1, self.k2):
            raise InvalidGainError(
                f"[[0, 1], [-k1, -k2]] must be Hurwitz (k1 > 0, k2 > 0), "
                f"got k1={self.k1}, k2={self.k2}"
            )
        if not self.k3 >= 0:
            raise InvalidGainError(f"k3 must be >= 0, got {self.k3}")
        if not self.epsilon > 0:
            raise InvalidGainError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.voltage_limit > 0:
            raise InvalidGainError(f"voltage_limit must be > 0, got {self.voltage_limit}")
        if not self.derivative_sigma > 0:
            raise InvalidGainError(
                f"derivative_sigma must be > 0, got {self.derivative_sigma}"
            )


@dataclass
class PIDState:
    """Integral and filtered-derivative memory of one PID loop."""

    integral: float = 0.0
    derivative: float = 0.0
    last_error: Optional[float] = None
    saturated: bool = False

    def preload(self, voltage: float, gains: PIDGains) -> None:
        """Set the integral so that zero error yields the given voltage."""
        if gains.k3 > 0:
            self.integral = voltage / (gains.epsilon * gains.k3)


def pid_inner_loop(
    setpoint: float,
    measured: float,
    mem: PIDState,
    gains: PIDGains,
    dt: float,
) -> float:
    """One PID update on a wheel angular velocity, returning the motor voltage.

    The derivative is a dirty differentiator with bandwidth parameter
    gains.derivative_sigma; the integral is trapezoidal. The voltage is
    clamped to +/-gains.voltage_limit and mem.saturated reports the clamp.
    While clamped, the integral is frozen whenever the error drives the
    output further into the limit (conditional integration).
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    e = setpoint - measured
    if mem.last_error is None:
        mem.last_error = e

    sigma = gains.derivative_sigma
    a1 = (2.0 * sigma - dt) / (2.0 * sigma + dt)
    a2 = 2.0 / (2.0 * sigma + dt)
    mem.derivative = a1 * mem.derivative + a2 * (e - mem.last_error)
    increment = 0.5 * (e + mem.last_error) * dt
    mem.integral += increment
    mem.last_error = e

    raw = (gains.k1 * e + gains.k2 * mem.derivative
           + gains.epsilon * gains.k3 * mem.integral)
    u = min(gains.voltage_limit, max(-gains.voltage_limit, raw))
    mem.saturated = u != raw
    if mem.saturated and increment * raw > 0:
        mem.integral -= increment
    return u


class WheelDrive:
    """A PID loop closed around one DC motor driving a wheel."""

    def __init__(
        self,
        *,
        gains: PIDGains = PIDGains(),
        motor: MotorParams = DEFAULT_MOTOR,
        model: str = "full",
        speed: float = 0.0,
        disturbance: float = 0.0,
    ) -> None:
        if model not in MOTOR_MODELS:
            raise ValueError(f"motor model must be one of {MOTOR_MODELS}, got {model!r}")
        self.gains = gains
        self.motor = motor
        self.model = model
        self.disturbance = disturbance
        self.state = MotorState(speed=speed)
        self.pid = PIDState()
        # Hold the initial speed without a start-up transient
        self.pid.preload(motor.torque_constant * speed, gains)
        self.voltage = 0.0

    @property
    def speed(self) -> float:
        return self.state.speed

    def step(self, setpoint: float, dt: float) -> float:
        """Advance the loop by dt and return the new shaft speed."""
        self.voltage = pid_inner_loop(setpoint, self.state.speed, self.pid, self.gains, dt)
        u = self.voltage + self.disturbance
        if self.model == "full":
            self.state = motor_step_full(self.state, u, self.motor, dt)
        else:
            speed = motor_step_reduced(self.state.speed, u, self.motor, dt)
            current = (u - self.motor.torque_constant * speed) / self.motor.resistance
            self.state = MotorState(speed=speed, current=current)
        return self.state.speed

    def __repr__(self) -> str:
        return (f"WheelDrive(model={self.model!r}, speed={self.state.speed:.6g}, "
                f"voltage={self.voltage:.6g})")


def boundary_layer_trajectory(
    z0: np.ndarray, k1: float, k2: float, tau_end: float, dtau: float = 1e-3
) -> np.ndarray:
    """Integrate dz1/dtau = z2, dz2/dtau = -k1 z1 - k2 z2 in the fast time.

    Returns:
        Array of shape (steps + 1, 2) with the fast state at each step
    """
    if not (tau_end > 0 and dtau > 0):
        raise ValueError(f"tau_end and dtau must be > 0, got {tau_end}, {dtau}")
    A = companion_matrix(k1, k2)
    steps = int(math.ceil(tau_end / dtau - 1e-9))
    out = np.empty((steps + 1, 2))
    out[0] = z = np.asarray(z0, dtype=float)
    for i in range(steps):
        z = rk4_step(lambda _t, s: A @ s, i * dtau, z, dtau)
        out[i + 1] = z
    return out
